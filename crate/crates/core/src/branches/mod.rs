//! One forward pass through the two synthesis branches.
//!
//! Branch 2 (unpaired then self-synthesis) turns clean `x` into `x_u_syn`
//! with noise extracted from `y`, denoises it into `x_rec`, and re-synthesizes
//! `x_s_syn` from `x_rec` and the noise extracted from `x_u_syn`. Branch 1
//! (self then unpaired) re-synthesizes `y` from `y_rec = DN(y)` with its own
//! noise (`y_s_syn`) and with the x-side noise (`y_u_syn`).

use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::BgmScope;
use crate::networks::{generate, ne_extract, NetworkHandle, Pass};
use crate::tensor::same_shape;

/// The four networks plus the self-collaboration counter.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub g: NetworkHandle,
    pub d: NetworkHandle,
    pub dn: NetworkHandle,
    pub dn0: NetworkHandle,
    pub k: usize,
}

impl ModelBundle {
    /// `(g, d, dn, dn0)` checksums.
    pub fn checksums(&self) -> Result<[String; 4]> {
        Ok([self.g.checksum()?, self.d.checksum()?, self.dn.checksum()?, self.dn0.checksum()?])
    }
}

/// Ablation ladder from the plain unpaired GAN up to the full two-branch model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    V1,
    V2,
    V3,
    V4,
    V5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5];

    pub fn structure(self) -> Structure {
        let s = |ne_module, bgm, self_synthesis, parallel| Structure { ne_module, bgm, self_synthesis, parallel };
        match self {
            Variant::V1 => s(false, false, false, false),
            Variant::V2 => s(false, true, false, false),
            Variant::V3 => s(true, true, false, false),
            Variant::V4 => s(true, true, true, false),
            Variant::V5 => s(true, true, true, true),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::V1 => "unpaired-synthesis GAN",
            Variant::V2 => "+ background guidance",
            Variant::V3 => "+ noise extraction",
            Variant::V4 => "single branch with self-synthesis",
            Variant::V5 => "parallel branches",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("variant", format!("unknown ablation variant `{s}` (expected V1..V5)")))
    }
}

/// Which parts of the synthesis graph are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Structure {
    /// Extract noise as `y - DN0(y)`; without it the raw noisy image is the noise input.
    pub ne_module: bool,
    /// Background guidance on the generator.
    pub bgm: bool,
    /// Branch 2 continues with self-synthesis (`x_s_syn`).
    pub self_synthesis: bool,
    /// Branch 1 runs alongside branch 2.
    pub parallel: bool,
}

impl Default for Structure {
    fn default() -> Self {
        Variant::V5.structure()
    }
}

impl Structure {
    pub fn validate(&self) -> Result<()> {
        if self.parallel && !self.self_synthesis {
            return Err(Error::config("structure.parallel", "parallel branches require self_synthesis"));
        }
        if self.self_synthesis && !self.ne_module {
            return Err(Error::config("structure.self_synthesis", "self-synthesis requires the noise-extraction module"));
        }
        Ok(())
    }

    /// Number of synthetic images the discriminator scores.
    pub fn fake_count(&self) -> usize {
        1 + usize::from(self.self_synthesis) + 2 * usize::from(self.parallel)
    }
}

/// How each network is run inside [`forward_structure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchPasses {
    pub g: Pass,
    pub dn: Pass,
    pub dn0: Pass,
    /// Cut the gradient path through extracted noise maps.
    pub detach_ne: bool,
}

impl Default for BranchPasses {
    /// Generator-step setting: G and a trainable DN0 on the tape, DN with batch
    /// statistics but detached parameters.
    fn default() -> Self {
        BranchPasses { g: Pass::TRACKED_EVAL, dn: Pass::TRAIN_DETACHED, dn0: Pass::TRACKED_EVAL, detach_ne: false }
    }
}

impl BranchPasses {
    /// Nothing on the tape; normalization reads running statistics.
    pub const INFERENCE: BranchPasses =
        BranchPasses { g: Pass::EVAL, dn: Pass::EVAL, dn0: Pass::EVAL, detach_ne: false };
}

/// Every intermediate signal of one pass. Signals of inactive parts are `None`.
#[derive(Debug, Clone)]
pub struct SynthesisBundle {
    pub structure: Structure,
    /// Noise fed to the unpaired synthesis of `x`: `y - DN0(y)`, or `y` without NE.
    pub n_y: Tensor,
    /// `DN0(y)` when NE is active.
    pub dn0_y: Option<Tensor>,
    pub x_u_syn: Tensor,
    pub x_rec: Tensor,
    pub n_x: Option<Tensor>,
    pub dn0_x: Option<Tensor>,
    pub x_s_syn: Option<Tensor>,
    pub y_rec: Option<Tensor>,
    pub y_s_syn: Option<Tensor>,
    pub y_u_syn: Option<Tensor>,
}

impl SynthesisBundle {
    /// Synthetic images scored by the discriminator, in the order
    /// `y_s_syn, y_u_syn, x_u_syn, x_s_syn` (inactive ones skipped).
    pub fn fakes(&self) -> Vec<&Tensor> {
        [self.y_s_syn.as_ref(), self.y_u_syn.as_ref(), Some(&self.x_u_syn), self.x_s_syn.as_ref()]
            .into_iter()
            .flatten()
            .collect()
    }

    /// `(content, synthetic)` pairs receiving background guidance.
    pub fn bgm_pairs<'a>(&'a self, x: &'a Tensor, scope: BgmScope) -> Vec<(&'a Tensor, &'a Tensor)> {
        if !self.structure.bgm {
            return Vec::new();
        }
        let mut pairs = vec![(x, &self.x_u_syn)];
        if let Some(xs) = &self.x_s_syn {
            pairs.push((&self.x_rec, xs));
        }
        if scope == BgmScope::AllPaths {
            if let (Some(yr), Some(ys)) = (&self.y_rec, &self.y_s_syn) {
                pairs.push((yr, ys));
            }
            if let (Some(yr), Some(yu)) = (&self.y_rec, &self.y_u_syn) {
                pairs.push((yr, yu));
            }
        }
        pairs
    }

    /// Named signals present in this bundle.
    pub fn signals(&self) -> Vec<(&'static str, &Tensor)> {
        let named = [
            ("n_y", Some(&self.n_y)),
            ("n_x", self.n_x.as_ref()),
            ("y_rec", self.y_rec.as_ref()),
            ("x_rec", Some(&self.x_rec)),
            ("y_s_syn", self.y_s_syn.as_ref()),
            ("y_u_syn", self.y_u_syn.as_ref()),
            ("x_u_syn", Some(&self.x_u_syn)),
            ("x_s_syn", self.x_s_syn.as_ref()),
        ];
        named.into_iter().filter_map(|(n, t)| t.map(|t| (n, t))).collect()
    }

    /// Writes image `index` of every signal as `<name>.png`; noise maps are shifted by 0.5.
    pub fn dump_png(&self, dir: &Path, index: usize) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.signals() {
            let images = Image::from_batch(t)?;
            let image = images
                .get(index)
                .ok_or_else(|| Error::invalid(format!("bundle has no image {index}")))?;
            let shown = if name.starts_with("n_") {
                Image { data: image.data.iter().map(|v| v + 0.5).collect(), ..image.clone() }
            } else {
                image.clone()
            };
            shown.clamped().save_png(&dir.join(format!("{name}.png")))?;
        }
        Ok(())
    }
}

/// Full two-branch pass with generator-step settings.
pub fn forward_branches(x: &Tensor, y: &Tensor, models: &ModelBundle) -> Result<SynthesisBundle> {
    forward_structure(x, y, models, Structure::default(), BranchPasses::default())
}

pub fn forward_structure(
    x: &Tensor,
    y: &Tensor,
    models: &ModelBundle,
    structure: Structure,
    passes: BranchPasses,
) -> Result<SynthesisBundle> {
    structure.validate()?;
    same_shape(x, y, "forward_branches")?;
    let cut = |t: Tensor| if passes.detach_ne { t.detach() } else { t };

    let (n_y, dn0_y) = if structure.ne_module {
        let ne = ne_extract(y, &models.dn0, passes.dn0)?;
        (cut(ne.noise), Some(ne.denoised))
    } else {
        (y.clone(), None)
    };
    let x_u_syn = generate(&models.g, x, &n_y, passes.g)?;
    let x_rec = models.dn.forward(&[&x_u_syn], passes.dn)?;

    let (mut n_x, mut dn0_x, mut x_s_syn) = (None, None, None);
    if structure.self_synthesis {
        let ne = ne_extract(&x_u_syn, &models.dn0, passes.dn0)?;
        let nx = cut(ne.noise);
        x_s_syn = Some(generate(&models.g, &x_rec, &nx, passes.g)?);
        n_x = Some(nx);
        dn0_x = Some(ne.denoised);
    }

    let (mut y_rec, mut y_s_syn, mut y_u_syn) = (None, None, None);
    if structure.parallel {
        let nx = n_x.as_ref().ok_or_else(|| Error::Contract("branch 1 needs n_x".into()))?;
        let yr = models.dn.forward(&[y], passes.dn)?;
        y_s_syn = Some(generate(&models.g, &yr, &n_y, passes.g)?);
        y_u_syn = Some(generate(&models.g, &yr, nx, passes.g)?);
        y_rec = Some(yr);
    }

    Ok(SynthesisBundle { structure, n_y, dn0_y, x_u_syn, x_rec, n_x, dn0_x, x_s_syn, y_rec, y_s_syn, y_u_syn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{
        make_denoiser, make_discriminator, make_generator, make_initial_ne, stub, Architecture, DenoiserConfig,
        DiscriminatorConfig, GeneratorConfig,
    };
    use crate::tensor::{from_f64, to_f64_vec};
    use candle_core::DType;

    fn t(v: [f64; 4]) -> Tensor {
        from_f64(v.to_vec(), &[1, 1, 2, 2], DType::F64).unwrap()
    }

    fn stubs(dn0: Architecture) -> ModelBundle {
        ModelBundle {
            g: stub(Architecture::SumGenerator, DType::F64).unwrap(),
            d: stub(Architecture::ConstantDiscriminator { value: 1.0 }, DType::F64).unwrap(),
            dn: stub(Architecture::IdentityDenoiser, DType::F64).unwrap(),
            dn0: stub(dn0, DType::F64).unwrap(),
            k: 0,
        }
    }

    fn vals(t: &Tensor) -> Vec<f64> {
        to_f64_vec(t).unwrap()
    }

    #[test]
    fn identity_teacher_adds_no_noise() {
        let x = t([0.1, 0.2, 0.3, 0.4]);
        let y = t([0.5, 0.6, 0.7, 0.8]);
        let b = forward_branches(&x, &y, &stubs(Architecture::IdentityDenoiser)).unwrap();
        assert_eq!(vals(&b.x_u_syn), vals(&x));
        assert_eq!(vals(b.y_s_syn.as_ref().unwrap()), vals(b.y_rec.as_ref().unwrap()));
    }

    #[test]
    fn hand_traced_dataflow() {
        let x = t([0.1, 0.2, 0.3, 0.4]);
        let y = t([0.5, 0.6, 0.7, 0.8]);
        let b = forward_branches(&x, &y, &stubs(Architecture::ZeroDenoiser)).unwrap();
        assert_eq!(vals(&b.n_y), vec![0.5, 0.6, 0.7, 0.8]);
        let xu = vec![0.1 + 0.5, 0.2 + 0.6, 0.3 + 0.7, 1.0];
        assert_eq!(vals(&b.x_u_syn), xu);
        assert_eq!(vals(&b.x_rec), xu);
        assert_eq!(vals(b.n_x.as_ref().unwrap()), xu);
        assert_eq!(vals(b.x_s_syn.as_ref().unwrap()), vec![1.0; 4]);
        assert_eq!(vals(b.y_rec.as_ref().unwrap()), vec![0.5, 0.6, 0.7, 0.8]);
        assert_eq!(vals(b.y_s_syn.as_ref().unwrap()), vec![1.0; 4]);
        assert_eq!(vals(b.y_u_syn.as_ref().unwrap()), vec![1.0; 4]);
        assert_eq!(b.fakes().len(), 4);
    }

    #[test]
    fn structures_produce_the_right_fakes() {
        let x = t([0.1, 0.2, 0.3, 0.4]);
        let y = t([0.5, 0.6, 0.7, 0.8]);
        let m = stubs(Architecture::ZeroDenoiser);
        for v in Variant::ALL {
            let s = v.structure();
            let b = forward_structure(&x, &y, &m, s, BranchPasses::INFERENCE).unwrap();
            assert_eq!(b.fakes().len(), s.fake_count(), "{v}");
        }
        let v1 = forward_structure(&x, &y, &m, Variant::V1.structure(), BranchPasses::INFERENCE).unwrap();
        assert_eq!(vals(&v1.n_y), vals(&y));
        assert!(v1.bgm_pairs(&x, BgmScope::AllPaths).is_empty());
        let v5 = forward_branches(&x, &y, &m).unwrap();
        assert_eq!(v5.bgm_pairs(&x, BgmScope::AllPaths).len(), 4);
        assert_eq!(v5.bgm_pairs(&x, BgmScope::Branch2).len(), 2);
    }

    #[test]
    fn fakes_are_the_four_synthetics_in_order() {
        let x = t([0.1, 0.2, 0.3, 0.4]);
        let y = t([0.5, 0.6, 0.7, 0.8]);
        let b = forward_branches(&x, &y, &stubs(Architecture::ZeroDenoiser)).unwrap();
        let f = b.fakes();
        assert!(std::ptr::eq(f[0], b.y_s_syn.as_ref().unwrap()));
        assert!(std::ptr::eq(f[1], b.y_u_syn.as_ref().unwrap()));
        assert!(std::ptr::eq(f[2], &b.x_u_syn));
        assert!(std::ptr::eq(f[3], b.x_s_syn.as_ref().unwrap()));
    }

    #[test]
    fn real_networks_keep_shapes_and_decompositions() {
        let models = ModelBundle {
            g: make_generator(&GeneratorConfig { width: 4, blocks: 1 }, 1, DType::F64, 1).unwrap(),
            d: make_discriminator(&DiscriminatorConfig { width: 4, layers: 2 }, 1, DType::F64, 2).unwrap(),
            dn: make_denoiser(&DenoiserConfig { width: 4, depth: 1, ..Default::default() }, 1, DType::F64, 3).unwrap(),
            dn0: make_initial_ne(1, DType::F64).unwrap(),
            k: 0,
        };
        let x = Tensor::rand(0f64, 1f64, (2, 1, 16, 16), &crate::tensor::device()).unwrap();
        let y = Tensor::rand(0f64, 1f64, (2, 1, 16, 16), &crate::tensor::device()).unwrap();
        let a = forward_branches(&x, &y, &models).unwrap();
        for (name, s) in a.signals() {
            assert_eq!(s.dims(), x.dims(), "{name}");
        }
        let ny_plus = (&a.n_y + a.dn0_y.as_ref().unwrap()).unwrap();
        let worst = vals(&ny_plus).iter().zip(vals(&y)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(worst <= 2.0 * f64::EPSILON);
        let b = forward_branches(&x, &y, &models).unwrap();
        assert_eq!(vals(a.y_u_syn.as_ref().unwrap()), vals(b.y_u_syn.as_ref().unwrap()));
    }

    #[test]
    fn debug_dump_writes_all_signals() {
        let dir = tempfile::tempdir().unwrap();
        let x = t([0.1, 0.2, 0.3, 0.4]);
        let b = forward_branches(&x, &x, &stubs(Architecture::ZeroDenoiser)).unwrap();
        b.dump_png(dir.path(), 0).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 8);
        assert!(b.dump_png(dir.path(), 3).is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("v3".parse::<Variant>().unwrap(), Variant::V3);
        assert!(matches!("V9".parse::<Variant>(), Err(Error::Config { .. })));
    }
}
