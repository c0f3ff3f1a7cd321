//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Oracles here are written independently of the library code
//! they check wherever that is practical.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use vislens::compress::{compress, expand_runs, reduction_rate, rle_cells, CompressionMethod, Filter, Reducer};
use vislens::distill::{kd_loss, train_decoder, DistillConfig, VisualDecoder};
use vislens::dualsim::{closed_form_outputs, simplified_attention, Relation, TwoObjectScene};
use vislens::geometry::{axis_split, decompose, intervene, project_clouds, scene_direction, ObjectMask, SceneFamily};
use vislens::numerics::{Matrix, RandomSource};
use vislens::rope::{layout_permutation, permute, FrequencySchedule, PatchPosition, Rope, RopeLayout, RopeScaling};
use vislens::tokenmap::{label_map, KeywordConfig, LabelMap, TokenCell, TokenMap};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn offset(rng: &mut RandomSource, max: i64) -> i64 {
    rng.index((2 * max + 1) as usize) as i64 - max
}

// Rotary embedding written out from the definition: group i rotates by
// pos * b^(-2i/d) * (1 + alpha (2i/d)^p).
fn oracle_rotate(v: &[f64], pos: i64, base: f64, alpha: f64, p: f64, neox: bool) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for i in 0..d / 2 {
        let frac = 2.0 * i as f64 / d as f64;
        let theta = base.powf(-frac) * (1.0 + alpha * frac.powf(p));
        let (a, b) = if neox { (i, i + d / 2) } else { (2 * i, 2 * i + 1) };
        let ang = pos as f64 * theta;
        out[a] = v[a] * ang.cos() - v[b] * ang.sin();
        out[b] = v[b] * ang.cos() + v[a] * ang.sin();
    }
    out
}

fn oracle_dot_2d(q: &[f64], qp: (i64, i64), k: &[f64], kp: (i64, i64), base: f64, alpha: f64, neox: bool) -> f64 {
    let h = q.len() / 2;
    let rq: Vec<f64> = [
        oracle_rotate(&q[..h], qp.0, base, alpha, 8.0, neox),
        oracle_rotate(&q[h..], qp.1, base, alpha, 8.0, neox),
    ]
    .concat();
    let rk: Vec<f64> = [
        oracle_rotate(&k[..h], kp.0, base, alpha, 8.0, neox),
        oracle_rotate(&k[h..], kp.1, base, alpha, 8.0, neox),
    ]
    .concat();
    rq.iter().zip(&rk).map(|(a, b)| a * b).sum()
}

fn criterion_1() -> Check {
    let base = 10_000.0;
    let mut rng = RandomSource::new(1001);
    let (mut worst_shift, mut worst_oracle, mut cases) = (0.0f64, 0.0f64, 0);
    for layout in [RopeLayout::AdjacentPairs, RopeLayout::RotateHalf] {
        let neox = layout == RopeLayout::RotateHalf;
        for alpha in [0.0, 49.0, 99.0] {
            let scaling = (alpha > 0.0).then_some(RopeScaling { alpha, p: 8.0 });
            for _ in 0..1000 {
                let d = [2usize, 4, 8, 64][rng.index(4)];
                let s = FrequencySchedule::new(base, d, scaling).map_err(|e| e.to_string())?;
                let rope = Rope::one_d(&s, layout);
                let (q, k) = (rng.normal_vec(d), rng.normal_vec(d));
                let (m, n, t) = (offset(&mut rng, 64), offset(&mut rng, 64), offset(&mut rng, 64));
                let a = rope.dot_1d(&q, m, &k, n).unwrap();
                let b = rope.dot_1d(&q, m + t, &k, n + t).unwrap();
                worst_shift = worst_shift.max((a - b).abs());
                let oq = oracle_rotate(&q, m, base, alpha, 8.0, neox);
                let ok = oracle_rotate(&k, n, base, alpha, 8.0, neox);
                let o: f64 = oq.iter().zip(&ok).map(|(x, y)| x * y).sum();
                worst_oracle = worst_oracle.max((a - o).abs());
                cases += 1;

                if d % 4 == 0 {
                    let rope2 = Rope::two_d(&s, layout).unwrap();
                    let mut pos = || (offset(&mut rng, 64), offset(&mut rng, 64));
                    let (qp, kp, sh) = (pos(), pos(), pos());
                    let a = rope2
                        .dot_2d(&q, PatchPosition::new(qp.0, qp.1), &k, PatchPosition::new(kp.0, kp.1))
                        .unwrap();
                    let b = rope2
                        .dot_2d(
                            &q,
                            PatchPosition::new(qp.0 + sh.0, qp.1 + sh.1),
                            &k,
                            PatchPosition::new(kp.0 + sh.0, kp.1 + sh.1),
                        )
                        .unwrap();
                    worst_shift = worst_shift.max((a - b).abs());
                    worst_oracle = worst_oracle.max((a - oracle_dot_2d(&q, qp, &k, kp, base, alpha, neox)).abs());
                    cases += 1;
                }
            }
        }
    }
    ensure(worst_shift < 1e-9, || format!("max shift error {worst_shift:e}"))?;
    ensure(worst_oracle < 1e-9, || format!("max deviation from reference rotation {worst_oracle:e}"))?;
    Ok(format!("{cases} cases, max |delta| {worst_shift:.2e}, max vs reference {worst_oracle:.2e}"))
}

fn criterion_2() -> Check {
    let s = FrequencySchedule::<f64>::unscaled(10_000.0, 64).map_err(|e| e.to_string())?;
    let theta = s.frequency(32).map_err(|e| e.to_string())?;
    ensure((theta - 1e-4).abs() < 1e-18, || format!("theta_(d/2) = {theta}"))?;
    let gap = 2.0 * (50.0 * theta).sin();
    ensure((0.0099..=0.0101).contains(&gap), || format!("gap {gap}"))?;
    Ok(format!("2 sin(50 theta_(d/2)) = {gap:.7}"))
}

fn criterion_3() -> Check {
    let mut rng = RandomSource::new(1003);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = [2usize, 4, 8, 64][rng.index(4)];
        let s = FrequencySchedule::unscaled(10_000.0, d).unwrap();
        let gptj = Rope::one_d(&s, RopeLayout::AdjacentPairs);
        let neox = Rope::one_d(&s, RopeLayout::RotateHalf);
        let perm = layout_permutation(d).unwrap();
        let (q, k) = (rng.normal_vec(d), rng.normal_vec(d));
        let (m, n) = (offset(&mut rng, 64), offset(&mut rng, 64));
        let a = gptj.dot_1d(&q, m, &k, n).unwrap();
        let b = neox.dot_1d(&permute(&q, &perm), m, &permute(&k, &perm), n).unwrap();
        worst = worst.max((a - b).abs());
    }
    ensure(worst <= 1e-12, || format!("max |delta| {worst:e}"))?;
    Ok(format!("1000 cases, max |delta| {worst:.2e}"))
}

// Raster-ordered two-token attention with unnormalized weights
// w_ij = Re[(q_i rotated to p_i) . (k_j rotated to p_j)].
fn oracle_scene(s: &TwoObjectScene<f64>) -> ([f64; 4], [f64; 4]) {
    let rot = |v: &[f64; 4], x: i64, y: i64| -> [f64; 4] {
        let (cx, sx) = ((x as f64 * s.theta).cos(), (x as f64 * s.theta).sin());
        let (cy, sy) = ((y as f64 * s.theta).cos(), (y as f64 * s.theta).sin());
        [v[0] * cx - v[1] * sx, v[1] * cx + v[0] * sx, v[2] * cy - v[3] * sy, v[3] * cy + v[2] * sy]
    };
    let (m, n) = (s.m as i64, s.n as i64);
    let (ax, ay) = match s.relation {
        Relation::Left => (-m, 0),
        Relation::Right => (m, 0),
        Relation::Front => (0, n),
        Relation::Behind => (0, -n),
    };
    let dot = |a: [f64; 4], b: [f64; 4]| a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
    let (qa, ka) = (rot(&s.q_a, ax, ay), rot(&s.k_a, ax, ay));
    let (qb, kb) = (rot(&s.q_b, 0, 0), rot(&s.k_b, 0, 0));
    let comb = |wa: f64, wb: f64| -> [f64; 4] { std::array::from_fn(|i| wa * s.v_a[i] + wb * s.v_b[i]) };
    (comb(dot(qa, ka), dot(qa, kb)), comb(dot(qb, ka), dot(qb, kb)))
}

fn criterion_4() -> Check {
    let mut rng = RandomSource::new(1004);
    let (mut worst_lib, mut worst_ref) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let base = TwoObjectScene::<f64>::random(&mut rng, Relation::Left);
        for r in Relation::ALL {
            let s = base.with_relation(r);
            let closed = closed_form_outputs(&s);
            let tokens = s.tokens();
            let pick = |t: &vislens::dualsim::SceneToken, a: [f64; 4], b: [f64; 4]| match t.object {
                vislens::dualsim::SceneObject::A => a.to_vec(),
                vislens::dualsim::SceneObject::B => b.to_vec(),
            };
            let qs: Vec<_> = tokens.iter().map(|t| pick(t, s.q_a, s.q_b)).collect();
            let ks: Vec<_> = tokens.iter().map(|t| pick(t, s.k_a, s.k_b)).collect();
            let vs: Vec<_> = tokens.iter().map(|t| pick(t, s.v_a, s.v_b)).collect();
            let pos: Vec<_> = tokens.iter().map(|t| t.position).collect();
            let out = simplified_attention(&qs, &ks, &vs, &pos, &s.rope()).unwrap();
            for (t, o) in tokens.iter().zip(&out) {
                let c = match t.object {
                    vislens::dualsim::SceneObject::A => closed.h_a,
                    vislens::dualsim::SceneObject::B => closed.h_b,
                };
                worst_lib = worst_lib.max(max_abs(&c, o));
            }
            let (ha, hb) = oracle_scene(&s);
            worst_ref = worst_ref.max(max_abs(&closed.h_a, &ha)).max(max_abs(&closed.h_b, &hb));
        }
    }
    ensure(worst_lib <= 1e-12, || format!("closed form vs attention {worst_lib:e}"))?;
    ensure(worst_ref <= 1e-12, || format!("closed form vs reference {worst_ref:e}"))?;
    Ok(format!("4000 scenes, max error {:.2e}", worst_lib.max(worst_ref)))
}

fn criterion_5() -> Check {
    let mut rng = RandomSource::new(1005);
    let (mut sum_err, mut reasm_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let s = TwoObjectScene::<f64>::random(&mut rng, Relation::Left);
        let l = decompose(&s.with_relation(Relation::Left));
        let r = decompose(&s.with_relation(Relation::Right));
        let vl = scene_direction(&s.with_relation(Relation::Left)).v;
        let vr = scene_direction(&s.with_relation(Relation::Right)).v;
        let sum: Vec<f64> = (0..4).map(|i| vl[i] + vr[i]).collect();
        let twice: Vec<f64> = l.common.iter().map(|c| 2.0 * c).collect();
        sum_err = sum_err.max(max_abs(&sum, &twice));
        reasm_err = reasm_err.max(max_abs(&l.reassemble(), &vl)).max(max_abs(&r.reassemble(), &vr));

        let b = decompose(&s.with_relation(Relation::Behind));
        ensure(b.c3 == 0.0 && b.c4 == 0.0, || format!("behind c3={} c4={}", b.c3, b.c4))?;
        ensure(b.key_x == [0.0; 4], || format!("key_x(behind) = {:?}", b.key_x))?;
        ensure(l.key_y == [0.0; 4], || format!("key_y(left) = {:?}", l.key_y))?;
    }
    ensure(sum_err <= 1e-12, || format!("v_left + v_right - 2 common = {sum_err:e}"))?;
    ensure(reasm_err <= 1e-12, || format!("reassembly error {reasm_err:e}"))?;

    let mut lin_err = 0.0f64;
    for _ in 0..200 {
        let dim = 2 + rng.index(10);
        let mut mk = || {
            let rows = 1 + rng.index(10);
            Matrix::new(rows, dim, rng.normal_vec(rows * dim)).unwrap()
        };
        let (s_r, n_r, s_p, n_p) = (mk(), mk(), mk(), mk());
        let dir = |s: &Matrix<f64>, n: &Matrix<f64>| -> Vec<f64> {
            (0..dim)
                .map(|c| {
                    let ms = (0..s.rows()).map(|r| s.get(r, c)).sum::<f64>() / s.rows() as f64;
                    let mn = (0..n.rows()).map(|r| n.get(r, c)).sum::<f64>() / n.rows() as f64;
                    ms - mn
                })
                .collect()
        };
        let (v_r, v_p) = (dir(&s_r, &n_r), dir(&s_p, &n_p));
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            let got = dir(&intervene(&s_r, &s_p, alpha).unwrap(), &intervene(&n_r, &n_p, alpha).unwrap());
            let want: Vec<f64> = v_r.iter().zip(&v_p).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
            lin_err = lin_err.max(max_abs(&got, &want));
        }
    }
    ensure(lin_err <= 1e-12, || format!("intervention linearity error {lin_err:e}"))?;
    Ok(format!(
        "sum {sum_err:.1e}, reassembly {reasm_err:.1e}, behind c3=c4=0, supports exact, intervention {lin_err:.1e}"
    ))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn criterion_6() -> Check {
    let mut rng = RandomSource::new(1006);
    let mut base = TwoObjectScene::<f64>::random(&mut rng, Relation::Left);
    // Offsets up to 4 at theta = 0.3 keep m*theta inside (0, pi).
    base.theta = 0.3;
    let family = SceneFamily {
        base,
        jitter: 0.05,
        max_offset: 4,
    };
    let src = RandomSource::new(6);
    let clouds: BTreeMap<&str, Vec<_>> = Relation::ALL
        .iter()
        .enumerate()
        .map(|(i, &r)| (r.as_str(), family.cloud(r, 100, &src.derive(i as u64))))
        .collect();
    let mean = |r: &str, f: &dyn Fn(&vislens::DirectionDecompositionF64) -> [f64; 4]| -> Vec<f64> {
        let c = &clouds[r];
        (0..4).map(|i| c.iter().map(|d| f(d)[i]).sum::<f64>() / c.len() as f64).collect()
    };
    // Signed key part: v - common.
    let signed = |d: &vislens::DirectionDecompositionF64| -> [f64; 4] {
        let v = d.reassemble();
        std::array::from_fn(|i| v[i] - d.common[i])
    };
    let cos = cosine(&mean("left", &signed), &mean("right", &signed));
    ensure(cos < -0.99, || format!("left/right key cosine {cos}"))?;

    for d in &clouds["left"] {
        ensure(d.key_y == [0.0; 4], || "left sample with nonzero key_y".into())?;
        ensure(d.key_x != [0.0; 4], || "left sample with zero key_x".into())?;
    }
    for d in &clouds["behind"] {
        ensure(d.key_x == [0.0; 4], || "behind sample with nonzero key_x".into())?;
        ensure(d.key_y != [0.0; 4], || "behind sample with zero key_y".into())?;
    }
    let all: Vec<_> = clouds.values().flatten().copied().collect();
    let pcs = project_clouds(&all).map_err(|e| e.to_string())?;
    ensure(pcs.len() == 400, || "PCA row count".into())?;
    Ok(format!("left/right mean key cosine {cos:.6}; left keys X-only, behind keys Y-only on all 100 samples"))
}

fn criterion_7() -> Check {
    let mask = ObjectMask {
        satellite: vec![0, 1, 2],
        nucleus: vec![6, 7],
        background: vec![3, 4, 5, 8],
    };
    // Small integers keep every product and partial sum exact.
    let mut rng = RandomSource::new(1007);
    let ints = |rng: &mut RandomSource, n: usize| -> Vec<f64> { (0..n).map(|_| offset(rng, 5) as f64).collect() };
    let q = Matrix::new(9, 8, ints(&mut rng, 72)).unwrap();
    let k = Matrix::new(9, 8, ints(&mut rng, 72)).unwrap();
    let r = axis_split(&q, &k, &mask).map_err(|e| e.to_string())?;
    for i in 0..9 {
        for j in 0..9 {
            let full: f64 = (0..8).map(|c| q.get(i, c) * k.get(j, c)).sum();
            ensure(r.m_x.get(i, j) + r.m_y.get(i, j) == full, || format!("M_X + M_Y != QK^T at ({i},{j})"))?;
        }
    }

    let mut worst_sum = 0.0f64;
    let mut worst_real = 0.0f64;
    for _ in 0..100 {
        let q = Matrix::new(9, 8, rng.normal_vec(72)).unwrap();
        let k = Matrix::new(9, 8, rng.normal_vec(72)).unwrap();
        let r = axis_split(&q, &k, &mask).unwrap();
        for i in 0..9 {
            let s: f64 = r.a_x.row(i).iter().chain(r.a_y.row(i)).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            for j in 0..9 {
                let full: f64 = (0..8).map(|c| q.get(i, c) * k.get(j, c)).sum();
                worst_real = worst_real.max((r.m_x.get(i, j) + r.m_y.get(i, j) - full).abs());
            }
        }
        ensure((0.0..=1.0).contains(&r.a_sn_x) && (0.0..=1.0).contains(&r.a_sn_y), || "a_SN out of [0,1]".into())?;
    }
    ensure(worst_sum <= 1e-12, || format!("row sum error {worst_sum:e}"))?;
    ensure(worst_real <= 1e-12, || format!("real-valued split error {worst_real:e}"))?;

    let mut qz = Matrix::new(9, 8, rng.normal_vec(72)).unwrap();
    let mut kz = Matrix::new(9, 8, rng.normal_vec(72)).unwrap();
    for i in 0..9 {
        qz.row_mut(i)[4..].fill(0.0);
        kz.row_mut(i)[4..].fill(0.0);
    }
    let r = axis_split(&qz, &kz, &mask).unwrap();
    ensure(r.m_y.data().iter().all(|&x| x == 0.0), || "M_Y not zero for zero Y halves".into())?;
    Ok(format!("integer split exact, real split {worst_real:.1e}, row sums {worst_sum:.1e}, zero-Y gives M_Y = 0"))
}

fn keywords() -> KeywordConfig {
    KeywordConfig::from_json(
        r#"{"objects": {"bear": ["bear", "head", "eye", "nose", "paw"], "tree": ["tree", "leaf"]},
            "colors": {"bear": [200, 120, 40], "tree": [30, 160, 60]}}"#,
    )
    .unwrap()
}

fn criterion_8() -> Check {
    let cfg = keywords();
    let cases: [(&str, usize, usize, Vec<&str>, Vec<&str>); 6] = [
        ("direct keyword", 1, 3, vec!["bear", "leaf", "paw"], vec!["bear", "tree", "bear"]),
        (
            "voting majority",
            3,
            3,
            vec!["bear", ".", "bear", ".", "xx", ".", "bear", "paw", "."],
            vec!["bear"; 9],
        ),
        (
            "frequency tie by distance",
            3,
            3,
            vec!["leaf", ".", "leaf", "paw", "xx", ".", "paw", ".", "."],
            vec!["tree", "tree", "tree", "bear", "bear", "tree", "bear", "bear", "others"],
        ),
        (
            "all meaningless",
            3,
            3,
            vec![".", ",", "!", " ", "xx", "", "?", ";", "..."],
            vec!["others", "others", "others", "others", "background", "others", "others", "others", "others"],
        ),
        (
            "non-keyword winner",
            2,
            2,
            vec!["sky", "sky", "xx", "bear"],
            vec!["others", "bear", "others", "bear"],
        ),
        ("isolated cell", 1, 1, vec!["xx"], vec!["background"]),
    ];
    for (name, h, w, tokens, expected) in &cases {
        let tm = TokenMap::from_tokens(*h, *w, tokens).unwrap();
        let got = serde_json::to_vec(&label_map(&tm, &cfg)).unwrap();
        let want = serde_json::to_vec(&LabelMap {
            height: *h,
            width: *w,
            labels: expected.iter().map(|s| s.to_string()).collect(),
        })
        .unwrap();
        ensure(got == want, || {
            format!("{name}: got {}", String::from_utf8_lossy(&got))
        })?;
    }
    Ok(format!("{} hand-traced maps match", cases.len()))
}

fn criterion_9() -> Check {
    let cfg = KeywordConfig::default();
    let plain = |ts: &[&str]| ts.iter().map(|t| TokenCell::plain(t)).collect::<Vec<_>>();
    let rng = RandomSource::new(9);
    let m = |filter| CompressionMethod {
        filter,
        reducer: Reducer::RandomSelect,
    };

    let runs = rle_cells(&plain(&["a", "a", "b"])).unwrap();
    let shape: Vec<_> = runs.iter().map(|r| (r.start, r.length, r.w1.as_str())).collect();
    ensure(shape == [(1, 2, "a"), (3, 1, "b")], || format!("{shape:?}"))?;
    ensure(rle_cells(&plain(&["q"; 17])).unwrap().len() == 1, || "identical run".into())?;
    let lens: Vec<_> = rle_cells(&plain(&["x", "x", "y", "y", "y", "x"]))
        .unwrap()
        .iter()
        .map(|r| r.length)
        .collect();
    ensure(lens == [2, 3, 1], || format!("{lens:?}"))?;

    let mut src = RandomSource::new(90);
    let v = Matrix::new(5, 3, src.normal_vec(15)).unwrap();
    let distinct = rle_cells(&plain(&["a", "b", "c", "d", "e"])).unwrap();
    ensure(compress(&v, &distinct, m(Filter::AllRuns), &cfg, &rng).unwrap() == v, || "distinct tokens changed V".into())?;

    let v2 = Matrix::new(2, 3, src.normal_vec(6)).unwrap();
    let punct = rle_cells(&plain(&["the", "."])).unwrap();
    let n = compress(&v2, &punct, m(Filter::FilterTop1), &cfg, &rng).unwrap().rows();
    ensure(n == 1, || format!("punctuation fixture kept {n}"))?;
    let second = rle_cells(&[TokenCell::plain("a"), TokenCell::with_second(".", "cat")]).unwrap();
    let n1 = compress(&v2, &second, m(Filter::FilterTop1), &cfg, &rng).unwrap().rows();
    let n2 = compress(&v2, &second, m(Filter::FilterTop2), &cfg, &rng).unwrap().rows();
    ensure((n1, n2) == (1, 2), || format!("top1/top2 kept {n1}/{n2}"))?;

    let alphabet = ["a", "b", ".", ",", " "];
    for _ in 0..500 {
        let len = 1 + src.index(80);
        let cells: Vec<TokenCell> = (0..len)
            .map(|_| TokenCell::with_second(alphabet[src.index(5)], alphabet[src.index(5)]))
            .collect();
        let runs = rle_cells(&cells).unwrap();
        ensure(runs.iter().map(|r| r.length).sum::<usize>() == len, || "partition".into())?;
        let top1: Vec<String> = cells.iter().map(|c| c.top1.clone()).collect();
        ensure(expand_runs(&runs) == top1, || "round trip".into())?;
        for r in &runs {
            let drop1 = !Filter::FilterTop1.keeps(r, &cfg);
            let drop2 = !Filter::FilterTop2.keeps(r, &cfg);
            ensure(!drop2 || drop1, || "top2 drop outside top1 drops".into())?;
        }
        let v = Matrix::<f64>::zeros(len, 2);
        let rate = |f| reduction_rate(len, compress(&v, &runs, m(f), &cfg, &rng).unwrap().rows()).unwrap();
        let (r0, r1, r2) = (rate(Filter::AllRuns), rate(Filter::FilterTop1), rate(Filter::FilterTop2));
        ensure(r0 <= r2 && r2 <= r1, || format!("rates {r0} {r1} {r2}"))?;
    }

    ensure(reduction_rate(100, 72).unwrap() == 28.0, || "100 -> 72".into())?;
    ensure(reduction_rate(37, 37).unwrap() == 0.0, || "N -> N".into())?;
    let r = reduction_rate(577, 416).unwrap();
    ensure((r - 27.90).abs() <= 0.01 && r == 100.0 * 161.0 / 577.0, || format!("577 -> 416 gave {r}"))?;
    ensure(reduction_rate(3, 4).is_err(), || "n_after > n_before accepted".into())?;
    let mp = CompressionMethod {
        filter: Filter::AllRuns,
        reducer: Reducer::MeanPool,
    };
    let constant = Matrix::from_rows(&[[2.5, -1.0]; 4]).unwrap();
    let out = compress(&constant, &rle_cells(&plain(&["z"; 4])).unwrap(), mp, &cfg, &rng).unwrap();
    ensure(out.row(0) == [2.5, -1.0], || "mean pool of constant run".into())?;
    Ok(format!("fixtures exact, 500 random sequences partition/round-trip/monotone, 577->416 = {r:.4}%"))
}

// Direct evaluation of the loss from its definition.
fn oracle_kd(s: &Matrix<f64>, t: &Matrix<f64>, tau: f64, alpha: f64) -> f64 {
    let sm = |row: &[f64], sc: f64| -> Vec<f64> {
        let mx = row.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = row.iter().map(|x| ((x - mx) / sc).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|x| x / z).collect()
    };
    let mut total = 0.0;
    for r in 0..s.rows() {
        let (pt, qt, q) = (sm(t.row(r), tau), sm(s.row(r), tau), sm(s.row(r), 1.0));
        let kl: f64 = pt.iter().zip(&qt).map(|(p, q)| p * (p / q).ln()).sum();
        let label = (0..t.cols()).fold(0, |b, j| if t.get(r, j) > t.get(r, b) { j } else { b });
        total += alpha * tau * tau * kl - (1.0 - alpha) * q[label].ln();
    }
    total / s.rows() as f64
}

fn criterion_10() -> Check {
    let cfg = |tau, alpha_kd| DistillConfig {
        tau,
        alpha_kd,
        ..DistillConfig::default()
    };
    let mut rng = RandomSource::new(1010);
    let rand = |rng: &mut RandomSource| Matrix::new(5, 7, rng.normal_vec(35).iter().map(|x| 2.0 * x).collect()).unwrap();
    let (mut worst_lin, mut worst_fd, mut worst_ref) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..20 {
        let (s, t) = (rand(&mut rng), rand(&mut rng));
        let tau = 0.5 + 0.25 * case as f64;
        let same = kd_loss(&t, &t, &cfg(tau, 1.0)).unwrap().0;
        ensure(same == 0.0, || format!("identical logits soft loss {same}"))?;

        let soft = kd_loss(&s, &t, &cfg(tau, 1.0)).unwrap().0;
        let hard = kd_loss(&s, &t, &cfg(tau, 0.0)).unwrap().0;
        for a in [0.2, 0.5, 0.8] {
            let l = kd_loss(&s, &t, &cfg(tau, a)).unwrap().0;
            worst_lin = worst_lin.max((l - (a * soft + (1.0 - a) * hard)).abs());
            worst_ref = worst_ref.max((l - oracle_kd(&s, &t, tau, a)).abs());
        }

        let c = cfg(tau, (case % 5) as f64 / 4.0);
        let (_, g) = kd_loss(&s, &t, &c).unwrap();
        let eps = 1e-5;
        for i in 0..35 {
            let (r, col) = (i / 7, i % 7);
            let (mut p, mut m) = (s.clone(), s.clone());
            p.set(r, col, s.get(r, col) + eps);
            m.set(r, col, s.get(r, col) - eps);
            let fd = (kd_loss(&p, &t, &c).unwrap().0 - kd_loss(&m, &t, &c).unwrap().0) / (2.0 * eps);
            let rel = (fd - g.get(r, col)).abs() / fd.abs().max(g.get(r, col).abs()).max(1e-8);
            worst_fd = worst_fd.max(rel);
        }
    }
    ensure(worst_lin <= 1e-12, || format!("alpha linearity {worst_lin:e}"))?;
    ensure(worst_ref <= 1e-12, || format!("loss vs direct evaluation {worst_ref:e}"))?;
    ensure(worst_fd <= 1e-4, || format!("finite-difference relative error {worst_fd:e}"))?;
    Ok(format!("soft(identical)=0, linearity {worst_lin:.1e}, gradient rel err {worst_fd:.1e} over 20 instances"))
}

fn criterion_11() -> Check {
    let start = Instant::now();
    let (d, vocab, n, n_val) = (16, 32, 2000, 500);
    let mut rng = RandomSource::new(1011);
    let mut gauss = |r: usize, c: usize, s: f64| Matrix::new(r, c, rng.normal_vec(r * c).iter().map(|x| x * s).collect()).unwrap();
    let w_star = gauss(d, vocab, 0.75);
    let v = gauss(n, d, 1.0);
    let vv = gauss(n_val, d, 1.0);
    let w_u = gauss(d, vocab, 0.1);
    let t = v.matmul(&w_star).unwrap();
    let tv = vv.matmul(&w_star).unwrap();
    // Teacher floor: mean of logsumexp(t) - max(t) over validation rows.
    let floor = (0..n_val)
        .map(|r| {
            let row = tv.row(r);
            let mx = row.iter().cloned().fold(f64::MIN, f64::max);
            mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln() - mx
        })
        .sum::<f64>()
        / n_val as f64;

    let init = VisualDecoder::from_unembedding(&w_u).with_zero_bias();
    let base = DistillConfig {
        tau: 1.0,
        alpha_kd: 0.5,
        lr: 0.5,
        steps: 5000,
        batch: 64,
        seed: 11,
        early_stop_patience: 10,
        warmup_steps: 100,
        eval_every: 100,
    };
    let mixed = train_decoder(&init, &v, &t, &vv, &tv, &base).map_err(|e| e.to_string())?;
    let pure = train_decoder(
        &init,
        &v,
        &t,
        &vv,
        &tv,
        &DistillConfig {
            alpha_kd: 1.0,
            ..base.clone()
        },
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let (rm, rp) = (mixed.best_val_loss / floor, pure.best_val_loss / floor);
    ensure(rm <= 1.05, || format!("mixed-loss student at {rm:.4} x floor"))?;
    ensure((rp - 1.0).abs() <= 0.05, || format!("pure-KD student at {rp:.4} x floor"))?;
    ensure(elapsed < 60.0, || format!("took {elapsed:.1}s"))?;

    let diverge = DistillConfig {
        lr: 1e4,
        steps: 5000,
        warmup_steps: 0,
        early_stop_patience: 1,
        eval_every: 10,
        ..base
    };
    let out = train_decoder(&init, &v, &t, &vv, &tv, &diverge).map_err(|e| e.to_string())?;
    ensure(out.stopped_early && out.steps_run < 5000, || format!("divergent run went {} steps", out.steps_run))?;
    Ok(format!(
        "floor {floor:.4}; val hard loss {:.4} (alpha=0.5, {rm:.3}x) and {:.4} (alpha=1, {rp:.3}x) in {elapsed:.1}s; divergent run stopped at step {}",
        mixed.best_val_loss, pure.best_val_loss, out.steps_run
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vislens"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{:?} exited {:?}: {}", args, out.status.code(), String::from_utf8_lossy(&out.stderr))
    })
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn criterion_12() -> Check {
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-fixtures", "--seed", "12"],
        vec!["rope-check", "--seed", "12", "--trials", "200"],
        vec!["simulate", "--seed", "12"],
        vec!["verify-geometry", "--seed", "12", "--trials", "200"],
        vec!["axis-split", "--seed", "12"],
        vec!["tokenmap", "--embeddings", "embeddings.vlmg", "--unembedding", "unembedding.vlmg", "--vocab", "vocab.json", "--height", "12", "--width", "16"],
        vec!["segmap", "--tokenmap", "tokenmap.json", "--keywords", "keywords.json"],
        vec!["stats", "--tokenmap", "tokenmap.json", "--keywords", "keywords.json", "--object", "bear", "--mode", "loose"],
        vec!["compress", "--seed", "12", "--tokenmap", "tokenmap.json", "--embeddings", "embeddings.vlmg", "--keywords", "keywords.json", "--method", "filter-top2"],
        vec!["distill", "--seed", "12", "--steps", "1000"],
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for cmd in &commands {
        for d in &dirs {
            run_cli(d.path(), cmd)?;
        }
    }
    let (a, b) = (snapshot(dirs[0].path()), snapshot(dirs[1].path()));
    ensure(a.keys().eq(b.keys()), || "runs produced different file sets".into())?;
    for (name, bytes) in &a {
        ensure(&b[name] == bytes, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} commands, {} artifacts byte-identical across reruns", commands.len(), a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("RoPE shift invariance (1D/2D, both layouts, alpha 0/49/99)", criterion_1),
        ("frequency decay 2 sin(50 theta) in [0.0099, 0.0101]", criterion_2),
        ("GPT-J vs rotate-half layout equivalence", criterion_3),
        ("closed-form two-object outputs vs attention", criterion_4),
        ("direction-vector geometry identities", criterion_5),
        ("direction clouds: anti-parallel left/right keys, disjoint supports", criterion_6),
        ("attention axis split", criterion_7),
        ("keyword segmentation fixtures", criterion_8),
        ("run-length compression", criterion_9),
        ("distillation loss and gradient", criterion_10),
        ("desk-scale distillation reaches the teacher floor", criterion_11),
        ("CLI determinism", criterion_12),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
