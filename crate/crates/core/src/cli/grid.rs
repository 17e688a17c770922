//! Conservativeness grid search over beam size, application point and `c`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::corpus::Corpus;
use crate::decoder::{beam_search, DecodeConfig, ScoreKind, Scorer};
use crate::error::{Error, Result};
use crate::metrics::{bleu, corpus_ter, Smoothing};
use crate::vocab::TokenId;

/// Largest `|c|` the grid accepts.
pub const C_GUARD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub beams: Vec<usize>,
    pub c_values: Vec<f64>,
    pub modes: Vec<ScoreKind>,
    /// Length cap and normalisation shared by every cell.
    pub base: DecodeConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            beams: vec![4, 6],
            c_values: c_range(0.0, 5.0, 0.1).expect("valid default range"),
            modes: vec![ScoreKind::Logits, ScoreKind::LogProbs],
            base: DecodeConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beams.is_empty() {
            return Err(Error::config("beams", "empty list"));
        }
        if self.beams.contains(&0) {
            return Err(Error::config("beams", "beam sizes must be positive"));
        }
        if self.c_values.is_empty() {
            return Err(Error::config("c_values", "empty list"));
        }
        if let Some(c) = self.c_values.iter().find(|c| !c.is_finite() || c.abs() > C_GUARD) {
            return Err(Error::config("c_values", format!("{c} is outside [-{C_GUARD}, {C_GUARD}]")));
        }
        if self.modes.is_empty() {
            return Err(Error::config("apply_at", "no application point selected"));
        }
        self.base.validate()
    }

    pub fn num_cells(&self) -> usize {
        self.beams.len() * self.modes.len() * self.c_values.len()
    }
}

/// `min, min + step, ..., max` with values rounded to nine decimals so that
/// `0.1` steps print cleanly.
pub fn c_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::config("c_step", "must be positive"));
    }
    if min.is_nan() || max.is_nan() || min > max {
        return Err(Error::config("c_min", "must not exceed c_max"));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((min + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellScores {
    pub ter: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub beam: usize,
    pub apply_at: ScoreKind,
    pub c: f64,
    /// Scores, or the reason the cell failed.
    pub outcome: std::result::Result<CellScores, String>,
}

impl GridRow {
    pub fn scores(&self) -> Option<CellScores> {
        self.outcome.as_ref().ok().copied()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.beam
            .cmp(&other.beam)
            .then(self.apply_at.cmp(&other.apply_at))
            .then(self.c.total_cmp(&other.c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// One row per cell, sorted by `(beam, apply_at, c)`.
    pub rows: Vec<GridRow>,
    /// The MT output scored against the references.
    pub baseline: CellScores,
    /// Unpenalised decoding per beam size.
    pub unpenalised: Vec<(usize, std::result::Result<CellScores, String>)>,
}

/// Lower TER first; ties go to lower `c`, then the smaller beam.
fn better(a: &GridRow, b: &GridRow) -> Ordering {
    let (sa, sb) = (a.scores().unwrap(), b.scores().unwrap());
    sa.ter
        .total_cmp(&sb.ter)
        .then(a.c.total_cmp(&b.c))
        .then(a.beam.cmp(&b.beam))
        .then(a.apply_at.cmp(&b.apply_at))
}

impl GridResult {
    pub fn best(&self) -> Option<&GridRow> {
        self.rows.iter().filter(|r| r.outcome.is_ok()).min_by(|a, b| better(a, b))
    }

    /// Highest TER; ties go to lower `c`, then the smaller beam.
    pub fn worst(&self) -> Option<&GridRow> {
        self.rows.iter().filter(|r| r.outcome.is_ok()).min_by(|a, b| {
            let (sa, sb) = (a.scores().unwrap(), b.scores().unwrap());
            sb.ter
                .total_cmp(&sa.ter)
                .then(a.c.total_cmp(&b.c))
                .then(a.beam.cmp(&b.beam))
                .then(a.apply_at.cmp(&b.apply_at))
        })
    }

    pub fn failed(&self) -> impl Iterator<Item = &GridRow> {
        self.rows.iter().filter(|r| r.outcome.is_err())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("beam,apply_at,c,ter,bleu,status\n");
        for r in &self.rows {
            let _ = match &r.outcome {
                Ok(s) => writeln!(out, "{},{},{},{:.6},{:.6},ok", r.beam, r.apply_at, r.c, s.ter, s.bleu),
                Err(e) => writeln!(
                    out,
                    "{},{},{},,,failed: {}",
                    r.beam,
                    r.apply_at,
                    r.c,
                    e.replace([',', '\n'], " ")
                ),
            };
        }
        out
    }

    /// Summary in the shape of a results table (baseline, unpenalised,
    /// best and worst `c`), followed by every cell.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, name: &str, beam: &str, mode: &str, c: &str, s: Option<CellScores>| {
            let (ter, bleu) = s.map_or(("failed".into(), "failed".into()), |s| {
                (format!("{:.4}", s.ter), format!("{:.4}", s.bleu))
            });
            let _ = writeln!(out, "{name:<12} {beam:>4}  {mode:<8} {c:>6}  {ter:>8}  {bleu:>8}");
        };
        let _ = writeln!(
            out,
            "{:<12} {:>4}  {:<8} {:>6}  {:>8}  {:>8}",
            "system", "beam", "apply_at", "c", "TER", "BLEU"
        );
        line(&mut out, "MT baseline", "-", "-", "-", Some(self.baseline));
        for (beam, s) in &self.unpenalised {
            line(&mut out, "w/o c", &beam.to_string(), "-", "0", s.as_ref().ok().copied());
        }
        for (name, row) in [("best c", self.best()), ("worst c", self.worst())] {
            if let Some(r) = row {
                line(&mut out, name, &r.beam.to_string(), r.apply_at.as_str(), &r.c.to_string(), r.scores());
            }
        }
        let failed = self.failed().count();
        let _ = writeln!(out, "\n{} cells, {} failed", self.rows.len(), failed);
        let _ = writeln!(out, "\n{:>4}  {:<8} {:>6}  {:>8}  {:>8}", "beam", "apply_at", "c", "TER", "BLEU");
        let (best, worst) = (self.best(), self.worst());
        for r in &self.rows {
            let mark = if Some(r) == best {
                "  <- best"
            } else if Some(r) == worst {
                "  <- worst"
            } else {
                ""
            };
            let scores = match &r.outcome {
                Ok(s) => format!("{:>8.4}  {:>8.4}", s.ter, s.bleu),
                Err(e) => format!("failed: {e}"),
            };
            let _ = writeln!(out, "{:>4}  {:<8} {:>6}  {scores}{mark}", r.beam, r.apply_at.as_str(), r.c);
        }
        out
    }
}

fn score(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>]) -> Result<CellScores> {
    Ok(CellScores {
        ter: corpus_ter(hyps, refs)?.score,
        bleu: bleu(hyps, refs, Smoothing::None)?.score,
    })
}

/// Decodes `dev` under every cell of `spec`. Encoder work is shared across
/// cells; a failing cell is recorded and the search continues.
pub fn run_grid<S: Scorer>(scorer: &S, dev: &Corpus, spec: &GridSpec) -> Result<GridResult> {
    run_grid_with(scorer, dev, spec, |_| {})
}

/// [`run_grid`] reporting each finished row to `on_row`.
pub fn run_grid_with<S: Scorer>(
    scorer: &S,
    dev: &Corpus,
    spec: &GridSpec,
    mut on_row: impl FnMut(&GridRow),
) -> Result<GridResult> {
    spec.validate()?;
    if dev.is_empty() {
        return Err(Error::EmptyInput("dev corpus is empty"));
    }
    let refs = dev
        .items()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.pe()
                .map(<[TokenId]>::to_vec)
                .ok_or_else(|| Error::InvalidTriplet("pe is missing".into()).at_item(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let contexts = dev
        .items()
        .iter()
        .enumerate()
        .map(|(i, t)| scorer.prepare(t.src(), t.mt()).map_err(|e| e.at_item(i)))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<_> = dev.items().iter().map(|t| t.conservative_set()).collect();

    let decode_cell = |cfg: &DecodeConfig| -> Result<CellScores> {
        let mut hyps = Vec::with_capacity(dev.len());
        for (i, t) in dev.items().iter().enumerate() {
            let out = beam_search(scorer, &contexts[i], &sets[i], cfg.max_len(t.mt().len()), cfg)
                .map_err(|e| e.at_item(i))?;
            hyps.push(out.tokens);
        }
        score(&hyps, &refs)
    };

    let mut beams = spec.beams.clone();
    beams.sort_unstable();
    beams.dedup();
    let mut modes = spec.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    let mut cs = spec.c_values.clone();
    cs.sort_by(f64::total_cmp);
    cs.dedup();

    let mut rows = Vec::with_capacity(beams.len() * modes.len() * cs.len());
    for &beam in &beams {
        for &apply_at in &modes {
            for &c in &cs {
                let cfg = DecodeConfig {
                    beam_size: beam,
                    c,
                    apply_at,
                    ..spec.base
                };
                let row = GridRow {
                    beam,
                    apply_at,
                    c,
                    outcome: decode_cell(&cfg).map_err(|e| e.to_string()),
                };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    rows.sort_by(GridRow::key_cmp);

    let unpenalised = beams
        .iter()
        .map(|&beam| {
            let cached = rows.iter().find(|r| r.beam == beam && r.c == 0.0);
            let s = match cached {
                Some(r) => r.outcome.clone(),
                None => decode_cell(&DecodeConfig {
                    beam_size: beam,
                    c: 0.0,
                    ..spec.base
                })
                .map_err(|e| e.to_string()),
            };
            (beam, s)
        })
        .collect();

    let mts: Vec<Vec<TokenId>> = dev.items().iter().map(|t| t.mt().to_vec()).collect();
    Ok(GridResult {
        rows,
        baseline: score(&mts, &refs)?,
        unpenalised,
    })
}
