"""Primitive opcode table shared by the graph engine and both kernel backends."""

ADD = 0
SUB = 1
MUL = 2
DIV = 3
MATMUL = 4
CONCAT = 5
SLICE = 6
RESHAPE = 7
MEAN = 8
SUM = 9
TANH = 10
SIGMOID = 11
RELU = 12
SQUARE = 13
EXP = 14
LOG = 15
MIN = 16
CLIP = 17
SCALE = 18
LAYER_NORMALIZE = 19
STOP_GRADIENT = 20

# leaf markers, never dispatched to a kernel
CONSTANT = 21
PARAMETER = 22

PRIMITIVE_NAMES = {
    "add": ADD,
    "sub": SUB,
    "mul": MUL,
    "div": DIV,
    "matmul": MATMUL,
    "concat": CONCAT,
    "slice": SLICE,
    "reshape": RESHAPE,
    "mean": MEAN,
    "sum": SUM,
    "tanh": TANH,
    "sigmoid": SIGMOID,
    "relu": RELU,
    "square": SQUARE,
    "exp": EXP,
    "log": LOG,
    "min": MIN,
    "clip": CLIP,
    "scale": SCALE,
    "layer_normalize": LAYER_NORMALIZE,
    "stop_gradient": STOP_GRADIENT,
}

OP_LABELS = {v: k for k, v in PRIMITIVE_NAMES.items()}
OP_LABELS[CONSTANT] = "constant"
OP_LABELS[PARAMETER] = "parameter"
