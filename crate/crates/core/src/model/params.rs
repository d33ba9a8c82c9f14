use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Shape, Tensor};

use super::config::ModelConfig;

/// How a tensor is filled by [`super::SimpleIr::init_params`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Zeros,
    Ones,
}

/// Name, shape and initializer of one learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

/// Ordered, named learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Contract(format!("duplicate parameter `{name}`")));
            }
        }
        Ok(ParameterSet { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Checks names and shapes against a layout, in order.
    pub fn check_layout(&self, layout: &[ParamSpec]) -> Result<()> {
        if self.entries.len() != layout.len() {
            return Err(Error::Contract(format!(
                "parameter set has {} tensors, layout expects {}",
                self.entries.len(),
                layout.len()
            )));
        }
        for ((name, t), spec) in self.entries.iter().zip(layout) {
            if *name != spec.name || t.shape() != spec.shape {
                return Err(Error::Contract(format!(
                    "parameter `{name}` {} does not match layout `{}` {}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Deterministic initialization from `seed`, rounded to `f32` storage precision.
    pub fn initialize(layout: &[ParamSpec], seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout
            .iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::Zeros => Tensor::zeros(spec.shape),
                    Init::Ones => Tensor::full(spec.shape, 1.0),
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let data = (0..spec.shape.numel())
                            .map(|_| rng.random_range(-bound..bound) as f32 as f64)
                            .collect();
                        Tensor::new(spec.shape, data).expect("layout shape")
                    }
                };
                (spec.name.clone(), t)
            })
            .collect();
        ParameterSet { entries }
    }
}

/// Closed-form parameter count of a SimpleIR network.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let packed = cfg.packed_channels();
    let quarter = c / 4;
    let hidden = c / cfg.reduction;
    let (ks, kb) = (cfg.square_kernel, cfg.band_kernel);

    let head = packed * c * 9 + c;
    let tail = c * packed * 9 + packed;

    let norms = 2 * 2 * c;
    let dsa_projections = 2 * (c * c + c) + 2 * (9 * c + c);
    let dsa_mlp = (hidden * c + hidden) + (c * hidden + c);
    let dsa_out = c * c + c;
    let ldam = (quarter * ks * ks + quarter) + 2 * (quarter * kb + quarter);
    let merge = 2 * c * c + c;
    let ffn = (9 * c * c + c) + (c * c + c);
    let per_fib = norms + dsa_projections + dsa_mlp + dsa_out + ldam + merge + ffn;

    Ok(head + cfg.num_fibs * per_fib + tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor::scalar(1.0);
        let err = ParameterSet::new(vec![("a".into(), t.clone()), ("a".into(), t)]);
        assert!(err.is_err());
    }

    #[test]
    fn initialization_is_seeded_and_f32_exact() {
        let layout = vec![
            ParamSpec { name: "w".into(), shape: Shape::new(4, 3, 3, 3), init: Init::FanIn(27) },
            ParamSpec { name: "b".into(), shape: Shape::new(1, 4, 1, 1), init: Init::Zeros },
            ParamSpec { name: "g".into(), shape: Shape::new(1, 4, 1, 1), init: Init::Ones },
        ];
        let a = ParameterSet::initialize(&layout, 7);
        assert_eq!(a, ParameterSet::initialize(&layout, 7));
        assert_ne!(a, ParameterSet::initialize(&layout, 8));
        let w = a.get("w").unwrap();
        let bound = 1.0 / 27f64.sqrt();
        assert!(w.data().iter().all(|&v| v.abs() <= bound && v == v as f32 as f64));
        assert!(a.get("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get("g").unwrap().data().iter().all(|&v| v == 1.0));
        a.check_layout(&layout).unwrap();
        assert!(a.check_layout(&layout[..2]).is_err());
    }
}
