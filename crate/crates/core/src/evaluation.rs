//! Identity preservation and reconfiguration metrics with pluggable feature
//! backends, plus a line-oriented report format.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::age::NUM_GROUPS;
use crate::data::SampleSource;
use crate::error::{Error, Result};
use crate::image_io::save_image;
use crate::scalar::Scalar;
use crate::synthesis::Synthesizer;
use crate::tensor::Tensor;

/// Side length of the fallback embedding grid.
pub const FALLBACK_GRID: usize = 16;
/// Cosine threshold of the fallback embedding.
pub const FALLBACK_THRESHOLD: f64 = 0.8;
/// Cosine threshold assumed for an external embedding when none is given.
pub const EXTERNAL_THRESHOLD: f64 = 0.5;

/// Face embedding with unit L2 norm and a verification threshold.
pub trait EmbeddingBackend<T: Scalar> {
    fn label(&self) -> &str;

    fn threshold(&self) -> f64;

    fn embed(&self, image: &Tensor<T>) -> Result<Vec<f64>>;

    fn embed_batch(&self, images: &[Tensor<T>]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|i| self.embed(i)).collect()
    }
}

/// Symmetric non-negative image distance, zero on identical inputs.
pub trait PerceptualBackend<T: Scalar> {
    fn label(&self) -> &str;

    fn distance(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64>;
}

/// Anything that renders a reference at a target group.
pub trait AgingModel<T: Scalar> {
    fn generate(&self, image: &Tensor<T>, group: usize) -> Result<Tensor<T>>;

    /// One output per group, in group order.
    fn generate_all(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        (0..NUM_GROUPS).map(|g| self.generate(image, g)).collect()
    }
}

/// Inference with the EMA weights.
impl<T: Scalar> AgingModel<T> for Synthesizer<T> {
    fn generate(&self, image: &Tensor<T>, group: usize) -> Result<Tensor<T>> {
        self.single(image, group, true)
    }

    fn generate_all(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.lifespan(image, true)
    }
}

pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() || n == 0.0 {
        return Err(Error::Backend(
            "embedding has zero or non-finite norm".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Block-averaged grayscale on a fixed grid, mean-centred and normalized.
#[derive(Clone, Debug)]
pub struct FallbackEmbedding {
    pub threshold: f64,
}

impl Default for FallbackEmbedding {
    fn default() -> Self {
        Self {
            threshold: FALLBACK_THRESHOLD,
        }
    }
}

fn cell(i: usize, n: usize, size: usize) -> (usize, usize) {
    let start = (i * size / n).min(size - 1);
    let end = ((i + 1) * size / n).clamp(start + 1, size);
    (start, end)
}

impl<T: Scalar> EmbeddingBackend<T> for FallbackEmbedding {
    fn label(&self) -> &str {
        "fallback"
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn embed(&self, image: &Tensor<T>) -> Result<Vec<f64>> {
        let (c, h, w) = image.dims3()?;
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "expected an RGB image, got {:?}",
                image.shape()
            )));
        }
        let d = image.data();
        let px = |ch: usize, y: usize, x: usize| d[(ch * h + y) * w + x].as_f64();
        let n = FALLBACK_GRID;
        let mut v = Vec::with_capacity(n * n);
        for gy in 0..n {
            let (y0, y1) = cell(gy, n, h);
            for gx in 0..n {
                let (x0, x1) = cell(gx, n, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += 0.299 * px(0, y, x) + 0.587 * px(1, y, x) + 0.114 * px(2, y, x);
                    }
                }
                v.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        normalize(v).or_else(|_| Ok(vec![1.0 / (n as f64); n * n]))
    }
}

/// Mean absolute pixel difference.
#[derive(Clone, Copy, Debug, Default)]
pub struct FallbackPerceptual;

impl<T: Scalar> PerceptualBackend<T> for FallbackPerceptual {
    fn label(&self) -> &str {
        "fallback"
    }

    fn distance(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
        a.check_same(b)?;
        let n = a.numel().max(1) as f64;
        Ok(a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (*x - *y).abs().as_f64())
            .sum::<f64>()
            / n)
    }
}

/// Run `sh -c cmd`, feed it `lines` on stdin and collect one stdout line per
/// input line.
fn run_lines(cmd: &str, lines: &[String]) -> Result<Vec<String>> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::Backend(format!("cannot start {cmd:?}: {e}")))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let input = lines.join("\n") + "\n";
    let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
    let out: Vec<String> = BufReader::new(child.stdout.take().expect("piped stdout"))
        .lines()
        .collect::<std::io::Result<_>>()?;
    writer
        .join()
        .map_err(|_| Error::Backend("stdin writer panicked".into()))??;
    let status = child.wait()?;
    if !status.success() {
        return Err(Error::Backend(format!("{cmd:?} exited with {status}")));
    }
    let out: Vec<String> = out.into_iter().filter(|l| !l.trim().is_empty()).collect();
    if out.len() != lines.len() {
        return Err(Error::Backend(format!(
            "{cmd:?} returned {} lines for {} inputs",
            out.len(),
            lines.len()
        )));
    }
    Ok(out)
}

fn parse_floats(line: &str) -> Result<Vec<f64>> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Backend(format!("not a number: {s:?}")))
        })
        .collect()
}

fn write_pngs<T: Scalar>(dir: &Path, tag: &str, images: &[&Tensor<T>]) -> Result<Vec<String>> {
    images
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let p: PathBuf = dir.join(format!("{tag}{i}.png"));
            save_image(*t, &p)?;
            Ok(p.display().to_string())
        })
        .collect()
}

/// Embedding computed by an external program. It receives one PNG path per
/// stdin line and prints one vector per line (whitespace or comma separated).
/// Vectors are re-normalized.
#[derive(Clone, Debug)]
pub struct ExternalEmbedding {
    pub command: String,
    pub threshold: f64,
}

impl<T: Scalar> EmbeddingBackend<T> for ExternalEmbedding {
    fn label(&self) -> &str {
        "external"
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn embed(&self, image: &Tensor<T>) -> Result<Vec<f64>> {
        Ok(self.embed_batch(std::slice::from_ref(image))?.remove(0))
    }

    fn embed_batch(&self, images: &[Tensor<T>]) -> Result<Vec<Vec<f64>>> {
        let dir = tempfile::tempdir()?;
        let refs: Vec<&Tensor<T>> = images.iter().collect();
        let paths = write_pngs(dir.path(), "img", &refs)?;
        run_lines(&self.command, &paths)?
            .iter()
            .map(|l| normalize(parse_floats(l)?))
            .collect()
    }
}

/// Distance computed by an external program. It receives two tab-separated
/// PNG paths per stdin line and prints one non-negative number per line.
#[derive(Clone, Debug)]
pub struct ExternalPerceptual {
    pub command: String,
}

impl<T: Scalar> PerceptualBackend<T> for ExternalPerceptual {
    fn label(&self) -> &str {
        "external"
    }

    fn distance(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
        let dir = tempfile::tempdir()?;
        let p = write_pngs(dir.path(), "pair", &[a, b])?;
        let out = run_lines(&self.command, &[format!("{}\t{}", p[0], p[1])])?;
        match parse_floats(&out[0])?.as_slice() {
            [d] if d.is_finite() && *d >= 0.0 => Ok(*d),
            other => Err(Error::Backend(format!(
                "expected one non-negative distance, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub group: usize,
    pub id_scores: [f64; NUM_GROUPS],
    pub id_pass: [bool; NUM_GROUPS],
    pub reconfig_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub id_rate: f64,
    pub reconfig_mean: f64,
    pub reconfig_std: f64,
}

impl Aggregate {
    /// `None` for an empty record list.
    pub fn from_records(records: &[EvalRecord]) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let passes = records
            .iter()
            .flat_map(|r| r.id_pass)
            .filter(|&p| p)
            .count();
        let d: Vec<f64> = records.iter().map(|r| r.reconfig_distance).collect();
        let (reconfig_mean, reconfig_std) = mean_std(&d);
        Some(Self {
            images: records.len(),
            id_rate: passes as f64 / (records.len() * NUM_GROUPS) as f64,
            reconfig_mean,
            reconfig_std,
        })
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub embedding_backend: String,
    pub perceptual_backend: String,
    pub threshold: f64,
    pub records: Vec<EvalRecord>,
    pub aggregate: Option<Aggregate>,
}

fn check_source<T: Scalar, S: SampleSource<T> + ?Sized>(testset: &S) -> Result<()> {
    if testset.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

/// Per-image identity scores against all six generated targets.
fn identity_scores<T: Scalar>(
    reference: &Tensor<T>,
    outputs: &[Tensor<T>],
    backend: &dyn EmbeddingBackend<T>,
) -> Result<([f64; NUM_GROUPS], [bool; NUM_GROUPS])> {
    let mut batch = Vec::with_capacity(outputs.len() + 1);
    batch.push(reference.clone());
    batch.extend(outputs.iter().cloned());
    let emb = backend.embed_batch(&batch)?;
    let mut scores = [0.0; NUM_GROUPS];
    let mut pass = [false; NUM_GROUPS];
    for t in 0..NUM_GROUPS {
        scores[t] = cosine(&emb[0], &emb[t + 1]);
        pass[t] = scores[t] >= backend.threshold();
    }
    Ok((scores, pass))
}

/// Fraction of (image, target group) pairs whose embedding cosine to the
/// reference reaches the backend threshold.
pub fn eval_identity<T, S>(
    model: &dyn AgingModel<T>,
    testset: &S,
    backend: &dyn EmbeddingBackend<T>,
) -> Result<f64>
where
    T: Scalar,
    S: SampleSource<T> + ?Sized,
{
    check_source(testset)?;
    let mut passes = 0usize;
    for i in 0..testset.len() {
        let (img, _) = testset.load(i)?;
        let outs = model.generate_all(&img)?;
        passes += identity_scores(&img, &outs, backend)?
            .1
            .iter()
            .filter(|&&p| p)
            .count();
    }
    Ok(passes as f64 / (testset.len() * NUM_GROUPS) as f64)
}

/// Mean and population std of `distance(I_r, F(I_r, z_r))`.
pub fn eval_reconfiguration<T, S>(
    model: &dyn AgingModel<T>,
    testset: &S,
    backend: &dyn PerceptualBackend<T>,
) -> Result<(f64, f64)>
where
    T: Scalar,
    S: SampleSource<T> + ?Sized,
{
    check_source(testset)?;
    let d = (0..testset.len())
        .map(|i| {
            let (img, r) = testset.load(i)?;
            backend.distance(&img, &model.generate(&img, r)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&d))
}

/// Both metrics from one pass over the test set.
pub fn evaluate<T, S>(
    model: &dyn AgingModel<T>,
    testset: &S,
    embedding: &dyn EmbeddingBackend<T>,
    perceptual: &dyn PerceptualBackend<T>,
) -> Result<EvalReport>
where
    T: Scalar,
    S: SampleSource<T> + ?Sized,
{
    check_source(testset)?;
    let mut records = Vec::with_capacity(testset.len());
    for index in 0..testset.len() {
        let (img, group) = testset.load(index)?;
        let outs = model.generate_all(&img)?;
        let (id_scores, id_pass) = identity_scores(&img, &outs, embedding)?;
        let reconfig_distance = perceptual.distance(&img, &outs[group])?;
        records.push(EvalRecord {
            index,
            group,
            id_scores,
            id_pass,
            reconfig_distance,
        });
    }
    Ok(EvalReport {
        embedding_backend: embedding.label().to_string(),
        perceptual_backend: perceptual.label().to_string(),
        threshold: embedding.threshold(),
        aggregate: Aggregate::from_records(&records),
        records,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Meta {
        embedding_backend: String,
        perceptual_backend: String,
        threshold: f64,
    },
    Record(EvalRecord),
    Aggregate(Aggregate),
}

/// One JSON object per line: a metadata line, one line per record, then the
/// aggregate line when there are records.
pub fn report_to_string(report: &EvalReport) -> String {
    let mut lines = vec![Line::Meta {
        embedding_backend: report.embedding_backend.clone(),
        perceptual_backend: report.perceptual_backend.clone(),
        threshold: report.threshold,
    }];
    lines.extend(report.records.iter().cloned().map(Line::Record));
    lines.extend(report.aggregate.map(Line::Aggregate));
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("report lines serialize") + "\n")
        .collect()
}

pub fn parse_report(text: &str) -> Result<EvalReport> {
    let bad = |m: String| Error::Config(format!("report: {m}"));
    let mut report: Option<EvalReport> = None;
    for (n, raw) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let line: Line =
            serde_json::from_str(raw).map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        match (line, report.as_mut()) {
            (
                Line::Meta {
                    embedding_backend,
                    perceptual_backend,
                    threshold,
                },
                None,
            ) => {
                report = Some(EvalReport {
                    embedding_backend,
                    perceptual_backend,
                    threshold,
                    records: Vec::new(),
                    aggregate: None,
                })
            }
            (Line::Record(r), Some(rep)) if rep.aggregate.is_none() => rep.records.push(r),
            (Line::Aggregate(a), Some(rep)) if rep.aggregate.is_none() => rep.aggregate = Some(a),
            _ => return Err(bad(format!("line {}: unexpected entry", n + 1))),
        }
    }
    report.ok_or_else(|| bad("missing metadata line".into()))
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_to_string(report))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    parse_report(&std::fs::read_to_string(path)?)
}
