"""scrubkit: machine-unlearning library and benchmark harness.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from scrubkit._core import (  # noqa: F401
    ArchitectureSpec,
    BlobsSpec,
    CheckpointTrail,
    ClassifierModel,
    ConfusionMatrix,
    ConfusionResult,
    ConfusionSpec,
    DatasetTriplet,
    ForgetSpec,
    LabeledDataset,
    MiaResult,
    ModelCheckpoint,
    RetainForget,
    ScrubConfig,
    ScrubError,
    ScrubResult,
    TrainConfig,
    UnlearningTask,
    __version__,
    build_matched_validation,
    cf_k,
    cnn_architecture,
    config_hash,
    confusion_matrix,
    eu_k,
    evaluate_error,
    fgt_err,
    finetune,
    ic_err,
    init_model,
    inject_confusion,
    kl_distance,
    make_blobs,
    mia_score,
    mia_score_from_losses,
    mlp_architecture,
    neggrad,
    per_example_loss,
    retrain,
    rewind,
    run_experiment_json,
    scale_up_factor,
    scrub,
    split_retain_forget,
    train,
    train_frozen,
    weight_hash,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
