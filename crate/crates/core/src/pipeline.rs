//! Raw features in, trained model out.

use crate::codec::Encoder;
use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::model::{FeatureMatrix, HyperParams, LabelMatrix, Modality, ModelState};
use crate::solver::{train, TrainTrace};

/// Output of [`train_from_raw`]: the fitted feature map, the learned state
/// and the kernelized training features it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kernel: KernelModel,
    pub state: ModelState,
    pub trace: TrainTrace,
    pub phi: [FeatureMatrix; 2],
}

impl TrainedModel {
    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::from_state(self.kernel.clone(), &self.state)
    }

    pub fn phi(&self, t: Modality) -> &FeatureMatrix {
        &self.phi[t.slot()]
    }
}

/// Fits anchors and kernel widths on the training set, kernelizes both
/// modalities, then trains every code length in one run.
pub fn train_from_raw(
    x1: &FeatureMatrix,
    x2: &FeatureMatrix,
    y: &LabelMatrix,
    hp: &HyperParams,
) -> Result<TrainedModel> {
    hp.validate()?;
    if x1.samples() != x2.samples() || y.samples() != x1.samples() {
        return Err(Error::DimensionMismatch {
            symbol: "sample counts (X1, X2, Y)".into(),
            expected: x1.samples().to_string(),
            actual: format!("{}, {}, {}", x1.samples(), x2.samples(), y.samples()),
        });
    }
    let kernel = KernelModel::fit(x1, x2, hp.anchors, hp.seed)?;
    let phi1 = kernel.transform(Modality::First, x1)?;
    let phi2 = kernel.transform(Modality::Second, x2)?;
    let (state, trace) = train(&phi1, &phi2, y, hp)?;
    Ok(TrainedModel {
        kernel,
        state,
        trace,
        phi: [phi1, phi2],
    })
}
