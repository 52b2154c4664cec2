"""Loss-less conversion of float transformer blocks to spike dynamics.

The package is organized bottom-up: exact matrix primitives, the four
spiking neuron families, calibration of thresholds and piecewise kernels,
spike-domain transformer components, energy accounting, and finally whole
toy blocks with conversion, serialization, and a CLI.
"""
from .calibration import (
    TARGETS,
    CalibrationReport,
    Target,
    curvature_sample,
    fit_fs,
    fit_hg,
    fit_target,
    gelu,
    hg_from_dict,
    hg_to_dict,
    observed_range,
    range_sample,
    sample_distribution,
    select_hierarchy,
    select_oat_thresholds,
    silu,
    target_fn,
)
from .energy import (
    DEFAULT_FLOP_COSTS,
    E_AC,
    E_MAC,
    EnergyLedger,
    energy_ratio,
    merge,
)
from .errors import (
    CalibrationError,
    EmptyInputError,
    EnergyAccountingError,
    FormatError,
    NonFiniteError,
    ShapeError,
    SpikePathError,
    StepMismatchError,
)
from .model import (
    ConvertedBlock,
    ModelConfig,
    RunTrace,
    WeightSet,
    ablate_dual_range,
    convert,
    dump_json,
    expected_shapes,
    float_forward,
    hg_sites,
    load_block,
    load_config,
    load_weights,
    oat_sites,
    relative_error,
    save_block,
    save_config,
    save_weights,
    spike_forward,
)
from .neurons import (
    FSParams,
    HGConfig,
    MTConfig,
    OATConfig,
    SpikeTrain,
    decode,
    fs_encode,
    hg_apply,
    hg_at_steps,
    mt_encode,
    oat_encode,
    truncate_schedule,
)
from .spikeops import (
    SpikeMatrixTrain,
    add_trains,
    apply_hg,
    concat_cols,
    constant_train,
    decode_train,
    encode_matrix,
    hadamard_mul,
    saa_mul,
    saw_mul,
    saw_mul_right,
    scale_columns,
    slice_cols,
    softmax_offset,
    spike_ffn,
    spike_gated_ffn,
    spike_layernorm,
    spike_softmax,
    transpose_train,
)
from .tensors import ActivationStats, Matrix, percentile

__version__ = "0.1.0"

__all__ = [
    "ActivationStats",
    "CalibrationError",
    "CalibrationReport",
    "ConvertedBlock",
    "DEFAULT_FLOP_COSTS",
    "E_AC",
    "E_MAC",
    "EmptyInputError",
    "EnergyAccountingError",
    "EnergyLedger",
    "FSParams",
    "FormatError",
    "HGConfig",
    "MTConfig",
    "Matrix",
    "ModelConfig",
    "NonFiniteError",
    "OATConfig",
    "RunTrace",
    "ShapeError",
    "SpikeMatrixTrain",
    "SpikePathError",
    "SpikeTrain",
    "StepMismatchError",
    "TARGETS",
    "Target",
    "WeightSet",
    "ablate_dual_range",
    "add_trains",
    "apply_hg",
    "concat_cols",
    "constant_train",
    "convert",
    "curvature_sample",
    "decode",
    "decode_train",
    "dump_json",
    "encode_matrix",
    "energy_ratio",
    "expected_shapes",
    "fit_fs",
    "fit_hg",
    "fit_target",
    "float_forward",
    "fs_encode",
    "gelu",
    "hadamard_mul",
    "hg_apply",
    "hg_at_steps",
    "hg_from_dict",
    "hg_sites",
    "hg_to_dict",
    "load_block",
    "load_config",
    "load_weights",
    "merge",
    "mt_encode",
    "oat_encode",
    "oat_sites",
    "observed_range",
    "percentile",
    "range_sample",
    "relative_error",
    "saa_mul",
    "sample_distribution",
    "save_block",
    "save_config",
    "save_weights",
    "saw_mul",
    "saw_mul_right",
    "scale_columns",
    "select_hierarchy",
    "select_oat_thresholds",
    "silu",
    "slice_cols",
    "softmax_offset",
    "spike_ffn",
    "spike_forward",
    "spike_gated_ffn",
    "spike_layernorm",
    "spike_softmax",
    "target_fn",
    "transpose_train",
    "truncate_schedule",
    "__version__",
]
