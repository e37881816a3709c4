//! Fixtures shared by the criterion benches.

use famr::datagen::{gen_blobs, split_forget};
use famr::nn::{self, TrainConfig};
use famr::{Activation, Dataset, ForgetSpec, ForgetSplit, ModelSpec, ParamVector};

/// A trained classifier and a class-forget split.
pub struct Fixture {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub split: ForgetSplit,
    pub theta0: ParamVector,
}

/// Five blobs in `dim` dimensions and a one-hidden-layer network of width `hidden`.
pub fn fixture(dim: usize, hidden: usize, per_class: usize) -> Fixture {
    let data = gen_blobs(5, per_class, dim, 0.1, 1).expect("valid generator args");
    let spec = ModelSpec::new(vec![dim, hidden, 5], Activation::Relu, Some(0)).expect("valid spec");
    let cfg = TrainConfig {
        epochs: 5,
        lr: 0.1,
        seed: 1,
        batch_size: 50,
        l2: 0.0,
    };
    let theta0 = nn::train_baseline(&data, &spec, &cfg).expect("training succeeds");
    let split = split_forget(&data, &ForgetSpec::Class { class_id: 2 }).expect("valid split");
    Fixture {
        spec,
        data,
        split,
        theta0,
    }
}
