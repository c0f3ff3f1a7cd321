use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::output::write_bytes;
use super::{fixtures, invalid, write_csv, write_json, CliError, CliResult};
use crate::compress::{compress, rle_runs, CompressionMethod, CompressionReport, Filter, Reducer};
use crate::distill::{teacher_floor, train_decoder, CheckpointMeta, DistillConfig, VisualDecoder};
use crate::dualsim::{attention_outputs, closed_form_outputs, Relation, SceneFixture, TwoObjectScene};
use crate::geometry::{
    axis_split, decompose, intervene, key_term_stats, normalize_layer_scores, project_clouds, scene_direction,
    DirectionDecomposition, LayerAxisScore, ObjectMask, SceneFamily,
};
use crate::numerics::{dot, format_float, norm, vlmg, Matrix, RandomSource};
use crate::rope::{layout_permutation, permute, FrequencySchedule, PatchPosition, Rope, RopeLayout, RopeScaling};
use crate::tokenmap::{
    emergence_rate, label_map, logit_lens, render_seg_map, synonym_answer, word_ratios, KeywordConfig, MatchMode,
    TokenMap,
};

fn require<'a, T>(v: &'a Option<T>, field: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| invalid(format!("missing required field `{field}`")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{field} ({}): {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{field} ({}): {e}", path.display())))
}

fn read_matrix(path: &Path, field: &str) -> CliResult<Matrix<f64>> {
    vlmg::load(path).map_err(|e| invalid(format!("{field} ({}): {e}", path.display())))
}

fn read_tokenmap(path: &Path) -> CliResult<TokenMap> {
    let tm: TokenMap = read_json(path, "tokenmap")?;
    tm.validate().map_err(|e| invalid(format!("tokenmap: {e}")))?;
    Ok(tm)
}

fn read_keywords(path: &Path) -> CliResult<KeywordConfig> {
    let cfg: KeywordConfig = read_json(path, "keywords")?;
    let warnings = cfg.validate().map_err(|e| invalid(format!("keywords: {e}")))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn random_vec(rng: &mut RandomSource, d: usize) -> Vec<f64> {
    rng.normal_vec(d)
}

fn random_offset(rng: &mut RandomSource, max: i64) -> i64 {
    rng.index((2 * max + 1) as usize) as i64 - max
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SuiteResult {
    pub cases: usize,
    pub violations: usize,
    pub max_error: f64,
}

impl SuiteResult {
    fn record(&mut self, err: f64, tol: f64) {
        self.cases += 1;
        if !(err <= tol) {
            self.violations += 1;
        }
        if err > self.max_error || err.is_nan() {
            self.max_error = err;
        }
    }

    /// Exact check: any nonzero error is a violation.
    fn record_exact(&mut self, err: f64) {
        self.record(err, 0.0);
    }
}

fn total_violations(suites: &BTreeMap<String, SuiteResult>) -> (usize, usize) {
    suites
        .values()
        .fold((0, 0), |(c, v), s| (c + s.cases, v + s.violations))
}

// ---------------------------------------------------------------- rope-check

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct RopeCheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random cases per (layout, dimension, scaling) suite.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub base: Option<f64>,
    /// Largest |position| and |shift| drawn.
    #[arg(long)]
    pub max_position: Option<i64>,
}

#[derive(Debug, Serialize)]
struct RopeReport {
    seed: u64,
    trials: usize,
    base: f64,
    shift_tolerance: f64,
    layout_tolerance: f64,
    cases: usize,
    violations: usize,
    frequency_gap: f64,
    frequency_gap_ok: bool,
    suites: BTreeMap<String, SuiteResult>,
}

pub fn rope_check(a: &RopeCheckArgs, out: &Path) -> CliResult<String> {
    let seed = a.seed.unwrap_or(0);
    let trials = a.trials.unwrap_or(1000);
    let base = a.base.unwrap_or(10_000.0);
    let max_pos = a.max_position.unwrap_or(64);
    if max_pos < 0 {
        return Err(invalid("max_position: must be non-negative"));
    }
    let (shift_tol, layout_tol) = (1e-9, 1e-12);
    let root = RandomSource::new(seed);
    let mut suites = BTreeMap::new();
    let mut stream = 0u64;
    let scalings: [Option<(f64, f64)>; 3] = [None, Some((49.0, 8.0)), Some((99.0, 8.0))];

    for layout in [RopeLayout::AdjacentPairs, RopeLayout::RotateHalf] {
        for d in [2usize, 4, 8, 64] {
            for scaling in scalings {
                let alpha = scaling.map_or(0.0, |s| s.0);
                let schedule = FrequencySchedule::new(base, d, scaling.map(|(alpha, p)| RopeScaling { alpha, p }))?;
                let rope = Rope::one_d(&schedule, layout);
                let mut rng = root.derive(stream);
                stream += 1;
                let mut s = SuiteResult::default();
                for _ in 0..trials {
                    let (q, k) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
                    let (m, n, t) = (
                        random_offset(&mut rng, max_pos),
                        random_offset(&mut rng, max_pos),
                        random_offset(&mut rng, max_pos),
                    );
                    let e = (rope.dot_1d(&q, m, &k, n)? - rope.dot_1d(&q, m + t, &k, n + t)?).abs();
                    s.record(e, shift_tol);
                }
                suites.insert(format!("shift_1d/{}/d{d}/alpha{alpha}", layout.as_str()), s);

                if d % 4 != 0 {
                    continue;
                }
                let rope = Rope::two_d(&schedule, layout)?;
                let mut rng = root.derive(stream);
                stream += 1;
                let mut s = SuiteResult::default();
                for _ in 0..trials {
                    let (q, k) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
                    let mut p = || PatchPosition::new(random_offset(&mut rng, max_pos), random_offset(&mut rng, max_pos));
                    let (qp, kp, shift) = (p(), p(), p());
                    let moved = rope.dot_2d(&q, qp.shifted(shift.x, shift.y), &k, kp.shifted(shift.x, shift.y))?;
                    s.record((rope.dot_2d(&q, qp, &k, kp)? - moved).abs(), shift_tol);
                }
                suites.insert(format!("shift_2d/{}/d{d}/alpha{alpha}", layout.as_str()), s);
            }
        }
    }

    let mut rng = root.derive(stream);
    let mut s = SuiteResult::default();
    for _ in 0..trials {
        let d = [2usize, 4, 8, 64][rng.index(4)];
        let schedule = FrequencySchedule::unscaled(base, d)?;
        let gptj = Rope::one_d(&schedule, RopeLayout::AdjacentPairs);
        let neox = Rope::one_d(&schedule, RopeLayout::RotateHalf);
        let perm = layout_permutation(d)?;
        let (q, k) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
        let (m, n) = (random_offset(&mut rng, max_pos), random_offset(&mut rng, max_pos));
        let a1 = gptj.dot_1d(&q, m, &k, n)?;
        let a2 = neox.dot_1d(&permute(&q, &perm), m, &permute(&k, &perm), n)?;
        s.record((a1 - a2).abs(), layout_tol);
    }
    suites.insert("layout_equivalence".into(), s);

    let last = FrequencySchedule::unscaled(base, 64)?.frequency(32)?;
    let gap = 2.0 * (50.0 * last).sin();
    let gap_ok = (0.0099..=0.0101).contains(&gap);

    let (cases, violations) = total_violations(&suites);
    write_json(
        &out.join("rope_check.json"),
        &RopeReport {
            seed,
            trials,
            base,
            shift_tolerance: shift_tol,
            layout_tolerance: layout_tol,
            cases,
            violations,
            frequency_gap: gap,
            frequency_gap_ok: gap_ok,
            suites,
        },
    )?;
    let summary = format!("rope-check: {cases} cases, {violations} violations, frequency gap {}", format_float(gap));
    if violations > 0 || !gap_ok {
        return Err(CliError::Verification(summary));
    }
    Ok(summary)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Direction vectors per relation.
    #[arg(long)]
    pub count: Option<usize>,
    /// Gaussian jitter added to the base scene's vectors per sample.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub max_offset: Option<u32>,
    /// Rotary frequency of the base scene (ignored with --scene).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Base scene JSON (keys qA, kA, vA, qB, kB, vB, relation, m, n, theta).
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RelationSummary {
    mean_signed_key_x: [f64; 4],
    mean_signed_key_y: [f64; 4],
    mean_common: [f64; 4],
    key_to_common_mean: Option<f64>,
    key_to_common_min: Option<f64>,
    key_to_common_max: Option<f64>,
}

fn mean4(xs: impl Iterator<Item = [f64; 4]>) -> [f64; 4] {
    let mut acc = [0.0; 4];
    let mut n = 0.0;
    for x in xs {
        for i in 0..4 {
            acc[i] += x[i];
        }
        n += 1.0;
    }
    acc.map(|a| if n > 0.0 { a / n } else { 0.0 })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

pub fn simulate(a: &SimulateArgs, out: &Path) -> CliResult<String> {
    let seed = a.seed.unwrap_or(0);
    let count = a.count.unwrap_or(100);
    if count == 0 {
        return Err(invalid("count: must be at least 1"));
    }
    let jitter = a.jitter.unwrap_or(0.05);
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(invalid("jitter: must be a non-negative number"));
    }
    let max_offset = a.max_offset.unwrap_or(4);
    if max_offset == 0 {
        return Err(invalid("max_offset: must be at least 1"));
    }
    let root = RandomSource::new(seed);
    let base: TwoObjectScene<f64> = match &a.scene {
        Some(p) => read_json::<SceneFixture>(p, "scene")?.try_into()?,
        None => {
            let mut s = TwoObjectScene::random(&mut root.derive(0), Relation::Left);
            s.theta = a.theta.unwrap_or(0.3);
            s.validate()?;
            s
        }
    };
    let family = SceneFamily {
        base,
        jitter,
        max_offset,
    };
    let mut all: Vec<DirectionDecomposition<f64>> = Vec::new();
    let mut summaries = BTreeMap::new();
    for (i, r) in Relation::ALL.into_iter().enumerate() {
        let cloud = family.cloud(r, count, &root.derive(1 + i as u64));
        let stats = key_term_stats(&cloud);
        summaries.insert(
            r.as_str().to_owned(),
            RelationSummary {
                mean_signed_key_x: mean4(cloud.iter().map(|d| d.signed_key_x())),
                mean_signed_key_y: mean4(cloud.iter().map(|d| d.signed_key_y())),
                mean_common: mean4(cloud.iter().map(|d| d.common)),
                key_to_common_mean: stats.map(|s| s.mean),
                key_to_common_min: stats.map(|s| s.min),
                key_to_common_max: stats.map(|s| s.max),
            },
        );
        all.extend(cloud);
    }

    let rows: Vec<String> = all
        .iter()
        .map(|d| {
            let v = d.reassemble();
            format!("{},{}", d.relation, v.map(format_float).join(","))
        })
        .collect();
    write_csv(&out.join("directions.csv"), "relation,v0,v1,v2,v3", &rows)?;
    let pcs = project_clouds(&all)?;
    let rows: Vec<String> = pcs
        .iter()
        .map(|(r, p1, p2)| format!("{r},{},{}", format_float(*p1), format_float(*p2)))
        .collect();
    write_csv(&out.join("pca.csv"), "relation,pc1,pc2", &rows)?;

    let lr_cos = cosine(&summaries["left"].mean_signed_key_x, &summaries["right"].mean_signed_key_x);
    let bf_cos = cosine(&summaries["behind"].mean_signed_key_y, &summaries["front"].mean_signed_key_y);
    let report = serde_json::json!({
        "seed": seed,
        "count_per_relation": count,
        "jitter": jitter,
        "max_offset": max_offset,
        "theta": family.base.theta,
        "left_right_key_x_cosine": lr_cos,
        "behind_front_key_y_cosine": bf_cos,
        "relations": summaries,
    });
    write_json(&out.join("simulate_report.json"), &report)?;
    Ok(format!(
        "simulate: {} direction vectors, left/right key cosine {}",
        all.len(),
        format_float(lr_cos)
    ))
}

// ---------------------------------------------------------------- verify-geometry

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct VerifyGeometryArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random scenes per relation.
    #[arg(long)]
    pub trials: Option<usize>,
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean_rows_diff(s: &Matrix<f64>, n: &Matrix<f64>) -> CliResult<Vec<f64>> {
    let (a, b) = (s.column_means()?, n.column_means()?);
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

pub fn verify_geometry(a: &VerifyGeometryArgs, out: &Path) -> CliResult<String> {
    let seed = a.seed.unwrap_or(0);
    let trials = a.trials.unwrap_or(1000);
    let tol = 1e-12;
    let mut rng = RandomSource::new(seed);
    let mut suites: BTreeMap<String, SuiteResult> = BTreeMap::new();
    let mut decomps = Vec::new();

    for _ in 0..trials {
        let scene = TwoObjectScene::<f64>::random(&mut rng, Relation::Left);
        for r in Relation::ALL {
            let s = scene.with_relation(r);
            let d = decompose(&s);
            let direct = scene_direction(&s).v;
            let closed = closed_form_outputs(&s);
            let oracle = attention_outputs(&s)?;
            let e = max_abs(&closed.h_a, &oracle.h_a).max(max_abs(&closed.h_b, &oracle.h_b));
            suites.entry("closed_form_vs_attention".into()).or_default().record(e, tol);
            suites.entry("reassembly".into()).or_default().record(max_abs(&d.reassemble(), &direct), tol);
            suites
                .entry("five_term_sum".into())
                .or_default()
                .record(max_abs(&d.five_terms.sum(), &direct), tol);
            let off_axis = if r.is_horizontal() { d.key_y } else { d.key_x };
            suites
                .entry("orthogonal_supports".into())
                .or_default()
                .record_exact(norm(&off_axis));
            decomps.push(d);
        }
        for (neg, pos, name) in [
            (Relation::Left, Relation::Right, "left_right"),
            (Relation::Behind, Relation::Front, "behind_front"),
        ] {
            let dn = decompose(&scene.with_relation(neg));
            let dp = decompose(&scene.with_relation(pos));
            let (vn, vp) = (dn.reassemble(), dp.reassemble());
            let sum: Vec<f64> = (0..4).map(|i| vn[i] + vp[i]).collect();
            let twice: Vec<f64> = dn.common.iter().map(|c| 2.0 * c).collect();
            suites.entry(format!("opposite_sum/{name}")).or_default().record(max_abs(&sum, &twice), tol);
            let kn: Vec<f64> = (0..4).map(|i| vn[i] - dn.common[i]).collect();
            let kp: Vec<f64> = (0..4).map(|i| -(vp[i] - dn.common[i])).collect();
            suites.entry(format!("collinearity/{name}")).or_default().record(max_abs(&kn, &kp), tol);
        }
        let behind = decompose(&scene.with_relation(Relation::Behind));
        suites
            .entry("behind_c3_c4_zero".into())
            .or_default()
            .record_exact(behind.c3.abs() + behind.c4.abs());
    }

    let icount = trials.clamp(1, 200);
    for _ in 0..icount {
        let dim = 2 + rng.index(15);
        let mk = |rng: &mut RandomSource| {
            let rows = 1 + rng.index(12);
            Matrix::new(rows, dim, rng.normal_vec(rows * dim))
        };
        let (s_r, n_r, s_p, n_p) = (mk(&mut rng)?, mk(&mut rng)?, mk(&mut rng)?, mk(&mut rng)?);
        let (v_r, v_p) = (mean_rows_diff(&s_r, &n_r)?, mean_rows_diff(&s_p, &n_p)?);
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let got = mean_rows_diff(&intervene(&s_r, &s_p, alpha)?, &intervene(&n_r, &n_p, alpha)?)?;
            let expected: Vec<f64> = v_r.iter().zip(&v_p).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect();
            suites
                .entry("intervention_linearity".into())
                .or_default()
                .record(max_abs(&got, &expected), tol);
        }
    }

    let stats = key_term_stats(&decomps);
    let (cases, violations) = total_violations(&suites);
    let report = serde_json::json!({
        "seed": seed,
        "trials": trials,
        "tolerance": tol,
        "cases": cases,
        "violations": violations,
        "suites": suites,
        "key_to_common": stats.map(|s| serde_json::json!({
            "count": s.count, "mean": s.mean, "min": s.min, "max": s.max
        })),
    });
    write_json(&out.join("geometry_report.json"), &report)?;
    let summary = format!("verify-geometry: {cases} cases, {violations} violations");
    if violations > 0 {
        return Err(CliError::Verification(summary));
    }
    Ok(summary)
}

// ---------------------------------------------------------------- axis-split

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct AxisSplitArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Synthetic images per layer.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Side of the square patch grid.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Head dimension (multiple of 4).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Satellite placement relative to the nucleus.
    #[arg(long)]
    pub relation: Option<Relation>,
    #[arg(long)]
    pub base: Option<f64>,
}

/// Satellite and nucleus blocks on a `g × g` grid, a third of the grid apart.
pub fn grid_mask(g: usize, relation: Relation) -> ObjectMask {
    let third = (g / 3).max(1);
    let band = |i: usize| (third..g - third.min(g - 1)).contains(&i) || g < 3;
    let mut mask = ObjectMask::default();
    for y in 0..g {
        for x in 0..g {
            let idx = y * g + x;
            let (along, across) = if relation.is_horizontal() { (x, y) } else { (y, x) };
            let first = along < third;
            let last = along >= g - third;
            if !band(across) || !(first || last) {
                mask.background.push(idx);
                continue;
            }
            // Left/Behind: satellite at the low end of its axis.
            let sat_low = matches!(relation, Relation::Left | Relation::Behind);
            if first == sat_low {
                mask.satellite.push(idx);
            } else {
                mask.nucleus.push(idx);
            }
        }
    }
    mask
}

pub fn axis_split_cmd(a: &AxisSplitArgs, out: &Path) -> CliResult<String> {
    let seed = a.seed.unwrap_or(0);
    let layers = a.layers.unwrap_or(6);
    let heads = a.heads.unwrap_or(4);
    let samples = a.samples.unwrap_or(4);
    let g = a.grid.unwrap_or(6);
    let dim = a.dim.unwrap_or(16);
    let relation = a.relation.unwrap_or(Relation::Left);
    if layers == 0 || heads == 0 || samples == 0 {
        return Err(invalid("layers/heads/samples: must be at least 1"));
    }
    if g < 3 {
        return Err(invalid("grid: must be at least 3"));
    }
    if dim == 0 || dim % 4 != 0 {
        return Err(invalid("dim: must be a positive multiple of 4"));
    }
    let schedule = FrequencySchedule::unscaled(a.base.unwrap_or(10_000.0), dim)?;
    let rope = Rope::two_d(&schedule, RopeLayout::AdjacentPairs)?;
    let mask = grid_mask(g, relation);
    mask.validate(g * g)?;
    let n = g * g;
    let root = RandomSource::new(seed);
    let scale = 1.0 / (dim as f64).sqrt();

    let mut points = Vec::with_capacity(layers);
    let mut raw = Vec::with_capacity(layers);
    for l in 0..layers {
        let mut lrng = root.derive(l as u64);
        let weights: Vec<(Matrix<f64>, Matrix<f64>)> = (0..heads)
            .map(|_| {
                let wq = Matrix::new(dim, dim, lrng.normal_vec(dim * dim).iter().map(|x| x * scale).collect())?;
                let wk = Matrix::new(dim, dim, lrng.normal_vec(dim * dim).iter().map(|x| x * scale).collect())?;
                Ok((wq, wk))
            })
            .collect::<crate::Result<_>>()?;
        let (mut ax, mut ay) = (0.0, 0.0);
        for _ in 0..samples {
            let x = Matrix::new(n, dim, lrng.normal_vec(n * dim))?;
            for (wq, wk) in &weights {
                let (q, k) = (x.matmul(wq)?, x.matmul(wk)?);
                let mut qr = Vec::with_capacity(n * dim);
                let mut kr = Vec::with_capacity(n * dim);
                for i in 0..n {
                    let pos = PatchPosition::new((i % g) as i64, (i / g) as i64);
                    qr.extend(rope.apply_2d(q.row(i), pos)?);
                    kr.extend(rope.apply_2d(k.row(i), pos)?);
                }
                let r = axis_split(&Matrix::new(n, dim, qr)?, &Matrix::new(n, dim, kr)?, &mask)?;
                ax += r.a_sn_x;
                ay += r.a_sn_y;
            }
        }
        let denom = (heads * samples) as f64;
        raw.push(serde_json::json!({"layer": l, "ax": ax / denom, "ay": ay / denom}));
        points.push(LayerAxisScore {
            layer: l,
            ax: ax / denom,
            ay: ay / denom,
        });
    }
    normalize_layer_scores(&mut points);
    let rows: Vec<String> = points
        .iter()
        .map(|p| format!("{},{},{}", p.layer, format_float(p.ax), format_float(p.ay)))
        .collect();
    write_csv(&out.join("axis_split.csv"), "layer,ax,ay", &rows)?;
    write_json(
        &out.join("axis_split.json"),
        &serde_json::json!({
            "seed": seed, "layers": layers, "heads": heads, "samples": samples,
            "grid": g, "dim": dim, "relation": relation, "raw": raw,
        }),
    )?;
    Ok(format!("axis-split: {layers} layers written"))
}

// ---------------------------------------------------------------- tokenmap

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct TokenmapArgs {
    /// VLMG1 matrix, N_V × D.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// VLMG1 matrix, D × |vocab|.
    #[arg(long)]
    pub unembedding: Option<PathBuf>,
    /// JSON array of token strings.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

pub fn tokenmap_cmd(a: &TokenmapArgs, out: &Path) -> CliResult<String> {
    let v = read_matrix(require(&a.embeddings, "embeddings")?, "embeddings")?;
    let w = read_matrix(require(&a.unembedding, "unembedding")?, "unembedding")?;
    let vocab: Vec<String> = read_json(require(&a.vocab, "vocab")?, "vocab")?;
    let (h, wd) = (*require(&a.height, "height")?, *require(&a.width, "width")?);
    let tm = logit_lens(&v, &w, &vocab, h, wd)?;
    write_json(&out.join("tokenmap.json"), &tm)?;
    Ok(format!("tokenmap: {h}x{wd} cells decoded"))
}

// ---------------------------------------------------------------- segmap

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct SegmapArgs {
    #[arg(long)]
    pub tokenmap: Option<PathBuf>,
    #[arg(long)]
    pub keywords: Option<PathBuf>,
}

pub fn segmap_cmd(a: &SegmapArgs, out: &Path) -> CliResult<String> {
    let tm = read_tokenmap(require(&a.tokenmap, "tokenmap")?)?;
    let cfg = read_keywords(require(&a.keywords, "keywords")?)?;
    let lm = label_map(&tm, &cfg);
    let seg = render_seg_map(&lm, &cfg)?;
    write_json(&out.join("labelmap.json"), &lm)?;
    write_bytes(&out.join("segmap.ppm"), &seg.to_ppm())?;
    Ok(format!("segmap: {}x{} labels", lm.height, lm.width))
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct StatsArgs {
    #[arg(long)]
    pub tokenmap: Option<PathBuf>,
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Tokens counted by the emergence rate (default: every representative word).
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
    /// Class looked up in the synonym map.
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Strict,
    Loose,
}

pub fn stats_cmd(a: &StatsArgs, out: &Path) -> CliResult<String> {
    let tm = read_tokenmap(require(&a.tokenmap, "tokenmap")?)?;
    let cfg = read_keywords(require(&a.keywords, "keywords")?)?;
    let (r_a, r_r) = word_ratios(&tm, &cfg);
    let names: Vec<String> = match &a.names {
        Some(n) => n.clone(),
        None => {
            let mut all: Vec<String> = cfg.representative.values().flatten().cloned().collect();
            all.sort();
            all.dedup();
            all
        }
    };
    let emergence = emergence_rate(&tm, &names);
    let mode = match a.mode.unwrap_or(ModeArg::Strict) {
        ModeArg::Strict => MatchMode::Strict,
        ModeArg::Loose => MatchMode::Loose,
    };
    let synonym = match &a.object {
        Some(obj) => Some(serde_json::json!({
            "object": obj,
            "mode": mode,
            "answer": if synonym_answer(&tm, obj, &cfg, mode)? { "yes" } else { "no" },
        })),
        None => None,
    };
    let report = serde_json::json!({
        "cells": tm.len(),
        "r_a": r_a,
        "r_r": r_r,
        "emergence_names": names,
        "emergence_rate": emergence,
        "synonym": synonym,
    });
    write_json(&out.join("stats.json"), &report)?;
    Ok(format!(
        "stats: r_A {} r_R {} emergence {}",
        format_float(r_a),
        format_float(r_r),
        format_float(emergence)
    ))
}

// ---------------------------------------------------------------- compress

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct CompressArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tokenmap: Option<PathBuf>,
    /// VLMG1 matrix with one row per token-map cell.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Keyword config supplying the meaningless set (builtin rule otherwise).
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// all-runs | filter-top1 | filter-top2
    #[arg(long)]
    pub method: Option<String>,
    /// random-select | mean-pool
    #[arg(long)]
    pub reducer: Option<String>,
}

pub fn compress_cmd(a: &CompressArgs, out: &Path) -> CliResult<String> {
    let tm = read_tokenmap(require(&a.tokenmap, "tokenmap")?)?;
    let v = read_matrix(require(&a.embeddings, "embeddings")?, "embeddings")?;
    if v.rows() != tm.len() {
        return Err(invalid(format!(
            "embeddings: {} rows for a token map of {} cells",
            v.rows(),
            tm.len()
        )));
    }
    let cfg = match &a.keywords {
        Some(p) => read_keywords(p)?,
        None => KeywordConfig::default(),
    };
    let method = CompressionMethod {
        filter: a.method.as_deref().map_or(Ok(Filter::default()), str::parse)?,
        reducer: a.reducer.as_deref().map_or(Ok(Reducer::default()), str::parse)?,
    };
    let runs = rle_runs(&tm)?;
    let rng = RandomSource::new(a.seed.unwrap_or(0));
    let compressed = compress(&v, &runs, method, &cfg, &rng)?;
    vlmg::save(&compressed, out.join("compressed.vlmg"))?;
    let report = CompressionReport::new(v.rows(), compressed.rows(), method, runs.len())?;
    write_json(&out.join("compression_report.json"), &report)?;
    Ok(format!(
        "compress: {} -> {} embeddings ({}%)",
        report.n_before,
        report.n_after,
        format_float(report.rate_percent)
    ))
}

// ---------------------------------------------------------------- distill

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct DistillArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha_kd: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Add a trainable bias to the decoder.
    #[arg(long)]
    pub bias: Option<bool>,
    /// Synthetic teacher: embedding width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Synthetic teacher: vocabulary size.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    /// VLMG1 inputs replacing the synthetic teacher (all four together).
    #[arg(long)]
    pub train_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub train_logits: Option<PathBuf>,
    #[arg(long)]
    pub val_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub val_logits: Option<PathBuf>,
    /// VLMG1 unembedding used as the initial decoder.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

impl DistillArgs {
    pub fn config(&self) -> DistillConfig {
        DistillConfig {
            tau: self.tau.unwrap_or(1.0),
            alpha_kd: self.alpha_kd.unwrap_or(0.5),
            lr: self.lr.unwrap_or(0.5),
            steps: self.steps.unwrap_or(5000),
            batch: self.batch.unwrap_or(64),
            seed: self.seed.unwrap_or(0),
            early_stop_patience: self.early_stop_patience.unwrap_or(10),
            warmup_steps: self.warmup_steps.unwrap_or(100),
            eval_every: self.eval_every.unwrap_or(100),
        }
    }
}

pub fn distill_cmd(a: &DistillArgs, out: &Path) -> CliResult<String> {
    let cfg = a.config();
    cfg.validate()?;
    let files = [&a.train_embeddings, &a.train_logits, &a.val_embeddings, &a.val_logits];
    let (v_train, t_train, v_val, t_val, w_u) = if files.iter().all(|f| f.is_none()) {
        let mut rng = RandomSource::new(cfg.seed).derive(0);
        let t = fixtures::linear_teacher(
            &mut rng,
            a.dim.unwrap_or(16),
            a.vocab.unwrap_or(32),
            a.n_train.unwrap_or(2000),
            a.n_val.unwrap_or(500),
        )?;
        (t.v_train, t.t_train, t.v_val, t.t_val, t.w_u)
    } else {
        let vt = read_matrix(require(&a.train_embeddings, "train_embeddings")?, "train_embeddings")?;
        let tt = read_matrix(require(&a.train_logits, "train_logits")?, "train_logits")?;
        let vv = read_matrix(require(&a.val_embeddings, "val_embeddings")?, "val_embeddings")?;
        let tv = read_matrix(require(&a.val_logits, "val_logits")?, "val_logits")?;
        let w = read_matrix(require(&a.init, "init")?, "init")?;
        (vt, tt, vv, tv, w)
    };
    let mut init = VisualDecoder::from_unembedding(&w_u);
    if a.bias.unwrap_or(true) {
        init = init.with_zero_bias();
    }
    let outcome = train_decoder(&init, &v_train, &t_train, &v_val, &t_val, &cfg)?;
    let floor = teacher_floor(&t_val)?;

    vlmg::save(&outcome.decoder.weights, out.join("decoder.vlmg"))?;
    let meta = CheckpointMeta {
        format: "VLMG1".into(),
        rows: outcome.decoder.weights.rows(),
        cols: outcome.decoder.weights.cols(),
        bias: outcome.decoder.bias.clone(),
        config: cfg.clone(),
    };
    write_json(&out.join("decoder.json"), &meta)?;
    write_bytes(&out.join("loss_curve.csv"), outcome.curve_csv().as_bytes())?;
    let report = serde_json::json!({
        "best_step": outcome.best_step,
        "best_val_loss": outcome.best_val_loss,
        "teacher_floor": floor,
        "ratio_to_floor": outcome.best_val_loss / floor,
        "steps_run": outcome.steps_run,
        "stopped_early": outcome.stopped_early,
        "config": cfg,
    });
    write_json(&out.join("distill_report.json"), &report)?;
    Ok(format!(
        "distill: best val loss {} at step {} (teacher floor {})",
        format_float(outcome.best_val_loss),
        outcome.best_step,
        format_float(floor)
    ))
}

// ---------------------------------------------------------------- gen-fixtures

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct GenFixturesArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

pub fn gen_fixtures(a: &GenFixturesArgs, out: &Path) -> CliResult<String> {
    let seed = a.seed.unwrap_or(0);
    let root = RandomSource::new(seed);
    let (h, w, d) = (a.height.unwrap_or(12), a.width.unwrap_or(16), a.dim.unwrap_or(24));
    if h == 0 || w == 0 || d == 0 {
        return Err(invalid("height/width/dim: must be at least 1"));
    }
    write_json(&out.join("scene.json"), &fixtures::scene(&mut root.derive(0), Relation::Left))?;
    write_json(&out.join("keywords.json"), &fixtures::keywords())?;
    write_json(&out.join("bear_tokenmap.json"), &fixtures::bear_tokenmap())?;
    write_json(&out.join("truck_tokenmap.json"), &fixtures::truck_tokenmap())?;
    write_json(&out.join("punct_tokenmap.json"), &fixtures::punctuation_tokenmap())?;
    vlmg::save(&fixtures::punctuation_embeddings(), out.join("punct_embeddings.vlmg"))?;
    let lens = fixtures::lens_fixture(&mut root.derive(1), h, w, d)?;
    vlmg::save(&lens.embeddings, out.join("embeddings.vlmg"))?;
    vlmg::save(&lens.unembedding, out.join("unembedding.vlmg"))?;
    write_json(&out.join("vocab.json"), &lens.vocab)?;
    Ok(format!("gen-fixtures: wrote fixtures for seed {seed} to {}", out.display()))
}
