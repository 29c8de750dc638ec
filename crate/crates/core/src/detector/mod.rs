//! Grid detector, its loss, decoding and training.

mod checkpoint;
mod decode;
mod loss;
mod net;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_HEADER,
};
pub use decode::{decode, nms, predict, Detection};
pub use loss::{
    assign_targets, best_anchor, detection_loss, detection_loss_grad, CellTarget, ClassWeights,
    LossBreakdown, LossTerms, BOX_WEIGHT,
};
pub use net::{
    head_channel, Architecture, ConvSpec, DetectorModel, ForwardCache, RawOutput, ANCHORS,
    ANCHOR_ASPECTS, ANCHOR_FIELDS, HEAD_OUTPUTS, NUM_CLASSES,
};
pub use train::{
    augmented_samples, train, train_with_progress, AdvSchedule, EpochLog, GeneratedPatch,
    PatchHistory, TrainConfig, TrainMode, TrainOutcome,
};

pub(crate) use train::resize_dataset;

use crate::data::{BBox, Image};
use crate::Result;

impl DetectorModel {
    /// Total detection loss on one image and its gradient w.r.t. the
    /// model-sized input pixels.
    pub fn loss_input_gradient(
        &self,
        image: &Image,
        targets: &[BBox],
        weights: ClassWeights,
    ) -> Result<(f64, Vec<f64>)> {
        let (raw, cache) = self.forward_cached(image);
        let (loss, d_raw) = detection_loss_grad(&raw, targets, weights, LossTerms::ALL)?;
        let (_, grad) = self.backward(&cache, &d_raw, true);
        Ok((loss.total(), grad.expect("input gradient requested")))
    }

    /// Parameter gradient of the selected loss terms on one image.
    pub fn loss_param_gradient(
        &self,
        image: &Image,
        targets: &[BBox],
        weights: ClassWeights,
        terms: LossTerms,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let (raw, cache) = self.forward_cached(image);
        let (loss, d_raw) = detection_loss_grad(&raw, targets, weights, terms)?;
        let (grad, _) = self.backward(&cache, &d_raw, false);
        Ok((loss, grad))
    }

    pub fn loss(
        &self,
        image: &Image,
        targets: &[BBox],
        weights: ClassWeights,
    ) -> Result<LossBreakdown> {
        detection_loss(&self.forward(image), targets, weights)
    }
}
