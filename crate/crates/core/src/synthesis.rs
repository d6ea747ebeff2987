//! Inference: single targets, lifespan traversal, interpolation and the
//! ablation modes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::age::{clean_age_code, interpolate_age_code, AgeCode, NUM_GROUPS};
use crate::autograd::Graph;
use crate::checkpoint::CheckpointBundle;
use crate::config::Architecture;
use crate::error::{Error, Result};
use crate::image_io::{hstack, save_image};
use crate::model::{Features, Model};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Single,
    Lifespan,
    Interpolate,
    ShapeOnly,
    TextureSwap,
    Entangled,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Single,
        Mode::Lifespan,
        Mode::Interpolate,
        Mode::ShapeOnly,
        Mode::TextureSwap,
        Mode::Entangled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Lifespan => "lifespan",
            Mode::Interpolate => "interpolate",
            Mode::ShapeOnly => "shape-only",
            Mode::TextureSwap => "texture-swap",
            Mode::Entangled => "entangled",
        }
    }

    fn needs_group(self) -> bool {
        !matches!(self, Mode::Lifespan | Mode::ShapeOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::BadRequest(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisRequest<T> {
    pub reference: Tensor<T>,
    pub mode: Mode,
    pub target_group: Option<usize>,
    pub alpha_steps: Option<usize>,
    pub donor: Option<Tensor<T>>,
    pub use_ema: bool,
}

impl<T> SynthesisRequest<T> {
    pub fn new(reference: Tensor<T>, mode: Mode) -> Self {
        Self {
            reference,
            mode,
            target_group: None,
            alpha_steps: None,
            donor: None,
            use_ema: true,
        }
    }

    pub fn group(mut self, g: usize) -> Self {
        self.target_group = Some(g);
        self
    }

    pub fn steps(mut self, k: usize) -> Self {
        self.alpha_steps = Some(k);
        self
    }

    pub fn donor(mut self, d: Tensor<T>) -> Self {
        self.donor = Some(d);
        self
    }

    pub fn live(mut self) -> Self {
        self.use_ema = false;
        self
    }

    /// Each mode takes exactly the optional fields it uses.
    pub fn validate(&self) -> Result<()> {
        let m = self.mode;
        let bad = |what: &str| Err(Error::BadRequest(format!("mode {m}: {what}")));
        match (m.needs_group(), self.target_group) {
            (true, None) => return bad("target group required"),
            (false, Some(_)) => return bad("target group not accepted"),
            (_, Some(g)) if g >= NUM_GROUPS => {
                return bad(&format!("target group {g} out of range"))
            }
            _ => {}
        }
        match (m == Mode::Interpolate, self.alpha_steps) {
            (true, None) => return bad("alpha steps required"),
            (true, Some(k)) if k < 2 => return bad("at least 2 alpha steps required"),
            (false, Some(_)) => return bad("alpha steps not accepted"),
            _ => {}
        }
        if m == Mode::Interpolate && self.target_group == Some(NUM_GROUPS - 1) {
            return bad("interpolation needs a following group");
        }
        match (m == Mode::TextureSwap, self.donor.is_some()) {
            (true, false) => bad("donor image required"),
            (false, true) => bad("donor image not accepted"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputLabel {
    Group(usize),
    Alpha(f64),
}

impl OutputLabel {
    pub fn file_suffix(self) -> String {
        match self {
            OutputLabel::Group(g) => format!("g{g}"),
            OutputLabel::Alpha(a) => format!("a{a:.3}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Output<T> {
    pub label: OutputLabel,
    pub image: Tensor<T>,
}

/// A read-only model with its live and EMA weights.
pub struct Synthesizer<T> {
    pub model: Model<T>,
    pub ema: ParamStore<T>,
}

impl<T: Scalar> Synthesizer<T> {
    pub fn new(model: Model<T>, ema: ParamStore<T>) -> Self {
        Self { model, ema }
    }

    /// EMA weights equal to the live ones.
    pub fn from_model(model: Model<T>) -> Self {
        let ema = model.params.clone();
        Self { model, ema }
    }

    pub fn from_checkpoint(bundle: &CheckpointBundle<T>) -> Result<Self> {
        Ok(Self::new(bundle.live_model()?, bundle.ema.clone()))
    }

    pub fn params(&self, use_ema: bool) -> &ParamStore<T> {
        if use_ema {
            &self.ema
        } else {
            &self.model.params
        }
    }

    fn block(&self) -> usize {
        self.model.config.block
    }

    /// Extract features once, then decode one image per code.
    fn decode_many(
        &self,
        image: &Tensor<T>,
        codes: &[AgeCode<T>],
        use_ema: bool,
        decode: impl Fn(
            &Model<T>,
            &mut Graph<T>,
            &ParamStore<T>,
            &Features,
            crate::autograd::Var,
        ) -> Result<crate::autograd::Var>,
    ) -> Result<Vec<Tensor<T>>> {
        self.model.check_image(image)?;
        let p = self.params(use_ema);
        let mut g = Graph::inference();
        let x = g.input(image.clone());
        let f = self.model.features(&mut g, p, x)?;
        codes
            .iter()
            .map(|c| {
                let z = g.input(c.to_tensor());
                let y = decode(&self.model, &mut g, p, &f, z)?;
                Ok(g.value(y).clone())
            })
            .collect()
    }

    fn translate_many(
        &self,
        image: &Tensor<T>,
        codes: &[AgeCode<T>],
        use_ema: bool,
    ) -> Result<Vec<Tensor<T>>> {
        self.decode_many(image, codes, use_ema, |m, g, p, f, z| {
            m.translate(g, p, f, z)
        })
    }

    fn group_codes(&self) -> Result<Vec<AgeCode<T>>> {
        (0..NUM_GROUPS)
            .map(|i| clean_age_code(i, self.block()))
            .collect()
    }

    fn code(&self, group: usize) -> Result<AgeCode<T>> {
        clean_age_code(group, self.block())
    }

    pub fn single(&self, image: &Tensor<T>, group: usize, use_ema: bool) -> Result<Tensor<T>> {
        let code = self.code(group)?;
        Ok(self.translate_many(image, &[code], use_ema)?.remove(0))
    }

    pub fn lifespan(&self, image: &Tensor<T>, use_ema: bool) -> Result<Vec<Tensor<T>>> {
        self.translate_many(image, &self.group_codes()?, use_ema)
    }

    /// `steps` frames from group `group` to `group + 1`.
    pub fn interpolate_sequence(
        &self,
        image: &Tensor<T>,
        group: usize,
        steps: usize,
        use_ema: bool,
    ) -> Result<Vec<(f64, Tensor<T>)>> {
        if steps < 2 || group + 1 >= NUM_GROUPS {
            return Err(Error::BadRequest(format!(
                "interpolation needs group < {} and steps >= 2, got group {group}, steps {steps}",
                NUM_GROUPS - 1
            )));
        }
        let alphas: Vec<f64> = (0..steps).map(|j| j as f64 / (steps - 1) as f64).collect();
        let codes = alphas
            .iter()
            .map(|&a| interpolate_age_code(group, a, self.block()))
            .collect::<Result<Vec<_>>>()?;
        let frames = self.translate_many(image, &codes, use_ema)?;
        Ok(alphas.into_iter().zip(frames).collect())
    }

    /// Per-group shape transform with the raw texture vector.
    pub fn shape_only(&self, image: &Tensor<T>, use_ema: bool) -> Result<Vec<Tensor<T>>> {
        self.require(Architecture::Disentangled)?;
        self.decode_many(image, &self.group_codes()?, use_ema, |m, g, p, f, z| {
            let t = f.texture.expect("disentangled features carry texture");
            m.decode(g, p, f.shape, t, z, false)
        })
    }

    /// Shape features of `reference` decoded with the texture of `donor`.
    pub fn texture_swap(
        &self,
        reference: &Tensor<T>,
        donor: &Tensor<T>,
        group: usize,
        use_ema: bool,
    ) -> Result<Tensor<T>> {
        self.require(Architecture::Disentangled)?;
        self.model.check_image(reference)?;
        self.model.check_image(donor)?;
        let p = self.params(use_ema);
        let mut g = Graph::inference();
        let xr = g.input(reference.clone());
        let fr = self.model.features(&mut g, p, xr)?;
        let xd = g.input(donor.clone());
        let fd = self.model.features(&mut g, p, xd)?;
        let z = g.input(self.code(group)?.to_tensor());
        let t = fd.texture.expect("disentangled features carry texture");
        let y = self.model.decode(&mut g, p, fr.shape, t, z, true)?;
        Ok(g.value(y).clone())
    }

    /// Baseline path of a model trained without the shape/texture split.
    pub fn entangled(&self, image: &Tensor<T>, group: usize, use_ema: bool) -> Result<Tensor<T>> {
        self.require(Architecture::Entangled)?;
        self.single(image, group, use_ema)
    }

    fn require(&self, arch: Architecture) -> Result<()> {
        if self.model.architecture() != arch {
            return Err(Error::IncompatibleCheckpoint(format!(
                "operation needs a {arch:?} model, checkpoint is {:?}",
                self.model.architecture()
            )));
        }
        Ok(())
    }

    pub fn run(&self, req: &SynthesisRequest<T>) -> Result<Vec<Output<T>>> {
        req.validate()?;
        let ema = req.use_ema;
        let x = &req.reference;
        let per_group = |imgs: Vec<Tensor<T>>| {
            imgs.into_iter()
                .enumerate()
                .map(|(g, image)| Output {
                    label: OutputLabel::Group(g),
                    image,
                })
                .collect()
        };
        let one = |g: usize, image| {
            vec![Output {
                label: OutputLabel::Group(g),
                image,
            }]
        };
        Ok(match req.mode {
            Mode::Single => {
                let g = req.target_group.expect("validated");
                one(g, self.single(x, g, ema)?)
            }
            Mode::Lifespan => per_group(self.lifespan(x, ema)?),
            Mode::ShapeOnly => per_group(self.shape_only(x, ema)?),
            Mode::Interpolate => self
                .interpolate_sequence(
                    x,
                    req.target_group.expect("validated"),
                    req.alpha_steps.expect("validated"),
                    ema,
                )?
                .into_iter()
                .map(|(a, image)| Output {
                    label: OutputLabel::Alpha(a),
                    image,
                })
                .collect(),
            Mode::TextureSwap => {
                let g = req.target_group.expect("validated");
                let donor = req.donor.as_ref().expect("validated");
                one(g, self.texture_swap(x, donor, g, ema)?)
            }
            Mode::Entangled => {
                let g = req.target_group.expect("validated");
                one(g, self.entangled(x, g, ema)?)
            }
        })
    }
}

/// Write `<stem>_<label>.png` per output and, for more than one output, a
/// horizontal `<stem>_strip.png`.
pub fn write_outputs<T: Scalar>(
    outputs: &[Output<T>],
    stem: &str,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(outputs.len() + 1);
    for o in outputs {
        let path = dir.join(format!("{stem}_{}.png", o.label.file_suffix()));
        save_image(&o.image, &path)?;
        written.push(path);
    }
    if outputs.len() > 1 {
        let images: Vec<Tensor<T>> = outputs.iter().map(|o| o.image.clone()).collect();
        let path = dir.join(format!("{stem}_strip.png"));
        save_image(&hstack(&images)?, &path)?;
        written.push(path);
    }
    Ok(written)
}
