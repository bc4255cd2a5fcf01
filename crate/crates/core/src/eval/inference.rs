use candle_core::{DType, Tensor};

use crate::error::Result;
use crate::synth::ImageRecord;
use crate::train::Method;
use crate::vit::EpvtModel;

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 128;

fn chunks<'a>(records: &'a [ImageRecord]) -> impl Iterator<Item = Vec<&'a ImageRecord>> {
    records.chunks(EVAL_BATCH).map(|c| c.iter().collect())
}

/// Class logits as a method predicts at test time: ERM classifies the
/// promptless feature, EPVT classifies through the adapter's prompt.
pub fn predict_logits(model: &EpvtModel, method: Method, images: &Tensor) -> Result<Tensor> {
    let plain = model.forward_plain(images)?.detach();
    let feature = match method {
        Method::Erm => plain,
        Method::Epvt => {
            let w = model.adapter_weights(&plain)?;
            let prompt = model.prompts().adapted_prompt(&w)?;
            model.forward_with_prompt(images, &prompt)?
        }
    };
    Ok(model.classify(&feature)?.detach())
}

/// Probability of the melanoma-like class (index 1) for every record.
pub fn melanoma_scores(model: &EpvtModel, method: Method, records: &[ImageRecord]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    for batch in chunks(records) {
        let images = model.images_to_tensor(&batch)?;
        let logits = predict_logits(model, method, &images)?;
        let probs = candle_nn::ops::softmax_last_dim(&logits.to_dtype(DType::F64)?)?;
        out.extend(probs.narrow(1, 1, 1)?.flatten_all()?.to_vec1::<f64>()?);
    }
    Ok(out)
}

/// Promptless class features `(d,)` for every record.
pub fn plain_features(model: &EpvtModel, records: &[ImageRecord]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(records.len());
    for batch in chunks(records) {
        let images = model.images_to_tensor(&batch)?;
        let f = model.forward_plain(&images)?.detach().to_dtype(DType::F64)?;
        out.extend(f.to_vec2::<f64>()?);
    }
    Ok(out)
}

/// Adapter weights over domain prompts for every record.
pub fn adapter_weights(model: &EpvtModel, records: &[ImageRecord]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(records.len());
    for batch in chunks(records) {
        let images = model.images_to_tensor(&batch)?;
        let f = model.forward_plain(&images)?.detach();
        let w = model.adapter_weights(&f)?.to_dtype(DType::F64)?;
        out.extend(w.to_vec2::<f64>()?);
    }
    Ok(out)
}
