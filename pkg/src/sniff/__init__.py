"""Sign-bit fault injection and last-layer extraction for transfer-learned networks."""

from .errors import (
    DegenerateObservationError,
    FaultParseError,
    FormatError,
    NumericDomainError,
    SearchFailureError,
    SessionDisciplineError,
    SniffError,
    UsageError,
    VanishingInputError,
)
from .evaluation import (
    accuracy_curve,
    accuracy_diff,
    make_blob_dataset,
    redundancy_detect,
    round_parameters,
    summarize_precision,
)
from .extraction import (
    AttackConfig,
    ObservationPair,
    RecoveryReport,
    extract_last_layer,
    find_nonvanishing_input,
    recover_bias,
    recover_weight,
)
from .faults import (
    Activation,
    Bias,
    BitFlip,
    ByteXor,
    FaultSession,
    FaultSpec,
    Input,
    Product,
    SetValue,
    SignFlip,
    Sum,
    Weight,
    apply_fault,
    bias_sign,
    parse_fault,
    product_sign,
)
from .model import (
    DenseLayer,
    FeatureExtractor,
    StudentLayer,
    StudentModel,
    generate_synthetic,
    load_model,
    save_model,
)
from .numeric import FloatWord, flip_bit, sign_flip, softmax

__version__ = "0.1.0"
