//! On-disk formats.

pub mod binary;
pub mod media;
pub mod text;

pub use binary::{load_checkpoint, load_features, save_checkpoint, save_features};
pub use media::{
    load_frame_dir, load_mask_png, load_png, load_raw_f32, load_wav, save_frame_dir, save_mask_png,
    save_png, save_wav, MaskDir,
};
pub use text::{
    ensemble_manifest, load_ensemble, load_params, save_loss_csv, save_params, FrameManifest,
};
