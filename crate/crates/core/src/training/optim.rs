use crate::model::NetParams;
use crate::scalar::{lit, Scalar};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: NetParams<T>,
    v: NetParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &NetParams<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut NetParams<T>, grads: &NetParams<T>) {
        self.step += 1;
        let (b1, b2) = (lit::<T>(self.beta1), lit::<T>(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = lit::<T>(1.0 - self.beta1.powi(self.step));
        let c2 = lit::<T>(1.0 - self.beta2.powi(self.step));
        let lr = lit::<T>(self.lr);
        let eps = lit::<T>(self.eps);
        let tensors = params.tensors_mut().iter_mut();
        let state = self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut());
        for ((p, g), (m, v)) in tensors.zip(grads.tensors()).zip(state) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + one_b1 * gi;
                v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetSpec, UNet};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let net = UNet::new(NetSpec {
            depth: 2,
            base_channels: 8,
            ..NetSpec::default()
        });
        let mut p: NetParams<f64> = net.init_params(3);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors_mut()[0].data[0] = 0.5;
        g.tensors_mut()[0].data[1] = -2.0;
        let mut opt = Adam::new(&p, 0.001, 0.9, 0.99, 1e-8);
        opt.update(&mut p, &g);
        let d0 = p.tensors()[0].data[0] - before.tensors()[0].data[0];
        let d1 = p.tensors()[0].data[1] - before.tensors()[0].data[1];
        assert!((d0 + 0.001).abs() < 1e-9);
        assert!((d1 - 0.001).abs() < 1e-9);
        assert_eq!(p.tensors()[1], before.tensors()[1]);
    }
}
