//! SGD (with momentum) and Adam. Parameters are visited in a fixed order
//! each step (`begin_step` then one `apply` per parameter); state buffers are
//! created on the first pass and always shape-match their parameter.

use alloc::vec::Vec;

use crate::math;
use crate::matrix::DenseMatrix;

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
        velocity: Vec<DenseMatrix>,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<DenseMatrix>,
        v: Vec<DenseMatrix>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Optimizer::Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::adam_with_beta1(lr, 0.9)
    }

    /// Adam with an explicit first-moment decay; GAN training conventionally
    /// runs beta1 = 0.5.
    pub fn adam_with_beta1(lr: f64, beta1: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Start an update; call before the per-parameter `apply` walk.
    pub fn begin_step(&mut self) {
        if let Optimizer::Adam { step, .. } = self {
            *step += 1;
        }
    }

    /// Update parameter `idx` (indices must arrive in the same order every
    /// step). A `None` gradient leaves the parameter in place; Adam moments
    /// still decay toward zero.
    pub fn apply(&mut self, idx: usize, param: &mut DenseMatrix, grad: Option<&DenseMatrix>) {
        match self {
            Optimizer::Sgd {
                lr,
                momentum,
                velocity,
            } => {
                while velocity.len() <= idx {
                    velocity.push(DenseMatrix::zeros(param.rows(), param.cols()));
                }
                let vel = &mut velocity[idx];
                debug_assert_eq!(vel.shape(), param.shape());
                match grad {
                    Some(g) => {
                        for ((vv, &gv), pv) in vel
                            .as_mut_slice()
                            .iter_mut()
                            .zip(g.as_slice())
                            .zip(param.as_mut_slice().iter_mut())
                        {
                            *vv = *momentum * *vv + gv;
                            *pv -= *lr * *vv;
                        }
                    }
                    None => {
                        for (vv, pv) in vel
                            .as_mut_slice()
                            .iter_mut()
                            .zip(param.as_mut_slice().iter_mut())
                        {
                            *vv *= *momentum;
                            *pv -= *lr * *vv;
                        }
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                while m.len() <= idx {
                    m.push(DenseMatrix::zeros(param.rows(), param.cols()));
                    v.push(DenseMatrix::zeros(param.rows(), param.cols()));
                }
                debug_assert_eq!(m[idx].shape(), param.shape());
                let bc1 = 1.0 - math::powi(*beta1, *step as i32);
                let bc2 = 1.0 - math::powi(*beta2, *step as i32);
                let (ms, vs) = (m[idx].as_mut_slice(), v[idx].as_mut_slice());
                for (i, pv) in param.as_mut_slice().iter_mut().enumerate() {
                    let gv = grad.map_or(0.0, |g| g.as_slice()[i]);
                    ms[i] = *beta1 * ms[i] + (1.0 - *beta1) * gv;
                    vs[i] = *beta2 * vs[i] + (1.0 - *beta2) * gv * gv;
                    let mhat = ms[i] / bc1;
                    let vhat = vs[i] / bc2;
                    *pv -= *lr * mhat / (math::sqrt(vhat) + *eps);
                }
            }
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr, .. } => *lr,
            Optimizer::Adam { lr, .. } => *lr,
        }
    }
}
