use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters of one SGD step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum SGD with coupled weight decay:
///
/// ```text
/// g  = grad + weight_decay · param
/// v' = momentum · v + g
/// p' = param − lr · v'
/// ```
pub fn sgd_update(param: &Tensor, grad: &Tensor, velocity: &Tensor, hp: SgdParams) -> Result<(Tensor, Tensor)> {
    let mut p = param.clone();
    let mut v = velocity.clone();
    sgd_update_in_place(&mut p, grad, &mut v, hp)?;
    Ok((p, v))
}

pub fn sgd_update_in_place(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, hp: SgdParams) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::Config(format!(
            "sgd_update shapes differ: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        let g = g + hp.weight_decay * *p;
        *v = hp.momentum * *v + g;
        *p -= hp.lr * *v;
    }
    Ok(())
}
