from attnvo.nn.model import (
    EVAL,
    TRAIN,
    ConfigError,
    ModelConfig,
    ParameterSet,
    StateError,
    Tape,
    backward,
    bilstm_forward,
    conv_encoder_forward,
    head_forward,
    init_parameters,
    mha_forward,
    model_forward,
    update_running_stats,
)
