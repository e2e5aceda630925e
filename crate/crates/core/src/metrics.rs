//! Temporal identity consistency: TL-ID over adjacent frames, TG-ID over all
//! frame pairs, each normalized by the same pair in the original video.

use serde::{Deserialize, Serialize};

use crate::alignment::FrameSequence;
use crate::error::{Error, Result};
use crate::model::{IdentityEmbedder, IdentityEmbedding};

/// Original-pair similarities with smaller magnitude are skipped.
pub const MIN_DENOMINATOR: f64 = 1e-4;

pub fn pair_similarity(a: &IdentityEmbedding, b: &IdentityEmbedding) -> f64 {
    a.vector().iter().zip(b.vector()).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    pub edited: f64,
    pub original: f64,
    /// `None` when the pair was skipped.
    pub ratio: Option<f64>,
}

impl PairScore {
    pub fn new(i: usize, j: usize, edited: f64, original: f64) -> Self {
        let ratio = (original.abs() >= MIN_DENOMINATOR).then(|| edited / original);
        PairScore {
            i,
            j,
            edited,
            original,
            ratio,
        }
    }
}

/// Mean ratio over the pairs that were not skipped, and the skip count.
pub fn mean_ratio<'a>(pairs: impl IntoIterator<Item = &'a PairScore>) -> Result<(f64, usize)> {
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for p in pairs {
        match p.ratio {
            Some(r) => {
                sum += r;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(Error::InvalidInput(
            "every frame pair was skipped (original similarity near zero)".into(),
        ));
    }
    Ok((sum / used as f64, skipped))
}

fn check_lengths(edited: usize, original: usize) -> Result<()> {
    if edited != original {
        return Err(Error::InvalidInput(format!(
            "edited video has {edited} frames, original has {original}"
        )));
    }
    if edited < 2 {
        return Err(Error::InvalidInput("identity metrics need at least two frames".into()));
    }
    Ok(())
}

/// Scores for every `i < j` pair, computed from embeddings.
pub fn all_pairs(edited: &[IdentityEmbedding], original: &[IdentityEmbedding]) -> Result<Vec<PairScore>> {
    check_lengths(edited.len(), original.len())?;
    let n = edited.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(PairScore::new(
                i,
                j,
                pair_similarity(&edited[i], &edited[j]),
                pair_similarity(&original[i], &original[j]),
            ));
        }
    }
    Ok(out)
}

pub fn tl_id_from_embeddings(edited: &[IdentityEmbedding], original: &[IdentityEmbedding]) -> Result<f64> {
    let pairs = all_pairs(edited, original)?;
    Ok(mean_ratio(pairs.iter().filter(|p| p.j == p.i + 1))?.0)
}

pub fn tg_id_from_embeddings(edited: &[IdentityEmbedding], original: &[IdentityEmbedding]) -> Result<f64> {
    Ok(mean_ratio(&all_pairs(edited, original)?)?.0)
}

fn embed_all(frames: &FrameSequence, embedder: &dyn IdentityEmbedder) -> Result<Vec<IdentityEmbedding>> {
    frames.frames.iter().map(|f| embedder.embed(f)).collect()
}

pub fn tl_id(edited: &FrameSequence, original: &FrameSequence, embedder: &dyn IdentityEmbedder) -> Result<f64> {
    check_lengths(edited.len(), original.len())?;
    tl_id_from_embeddings(&embed_all(edited, embedder)?, &embed_all(original, embedder)?)
}

pub fn tg_id(edited: &FrameSequence, original: &FrameSequence, embedder: &dyn IdentityEmbedder) -> Result<f64> {
    check_lengths(edited.len(), original.len())?;
    tg_id_from_embeddings(&embed_all(edited, embedder)?, &embed_all(original, embedder)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tl_id: f64,
    pub tg_id: f64,
    pub num_frames: usize,
    /// Skipped pairs among all `i < j` pairs (adjacent pairs included).
    pub skipped_pairs: usize,
    #[serde(skip)]
    pub per_pair: Vec<PairScore>,
}

impl MetricReport {
    pub fn from_embeddings(edited: &[IdentityEmbedding], original: &[IdentityEmbedding]) -> Result<Self> {
        let pairs = all_pairs(edited, original)?;
        let (tl, _) = mean_ratio(pairs.iter().filter(|p| p.j == p.i + 1))?;
        let (tg, skipped) = mean_ratio(&pairs)?;
        Ok(MetricReport {
            tl_id: tl,
            tg_id: tg,
            num_frames: edited.len(),
            skipped_pairs: skipped,
            per_pair: pairs,
        })
    }

    pub fn evaluate(edited: &FrameSequence, original: &FrameSequence, embedder: &dyn IdentityEmbedder) -> Result<Self> {
        check_lengths(edited.len(), original.len())?;
        Self::from_embeddings(&embed_all(edited, embedder)?, &embed_all(original, embedder)?)
    }

    /// Per-pair CSV: `i,j,edited,original,ratio` (empty ratio when skipped).
    pub fn pairs_csv(&self) -> String {
        let mut s = String::from("i,j,edited,original,ratio\n");
        for p in &self.per_pair {
            let r = p.ratio.map(|r| r.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", p.i, p.j, p.edited, p.original, r));
        }
        s
    }
}

/// Unweighted mean of per-video scores; frame and skip counts are summed.
pub fn corpus_average(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("corpus average of zero reports".into()));
    }
    if reports.len() == 1 {
        return Ok(reports[0].clone());
    }
    let k = reports.len() as f64;
    Ok(MetricReport {
        tl_id: reports.iter().map(|r| r.tl_id).sum::<f64>() / k,
        tg_id: reports.iter().map(|r| r.tg_id).sum::<f64>() / k,
        num_frames: reports.iter().map(|r| r.num_frames).sum(),
        skipped_pairs: reports.iter().map(|r| r.skipped_pairs).sum(),
        per_pair: Vec::new(),
    })
}
