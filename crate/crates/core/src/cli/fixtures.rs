//! Seeded synthetic inputs: scenes, token maps, keyword sets, embeddings
//! with an unembedding, and a linear teacher for distillation.

use crate::dualsim::{Relation, SceneFixture, TwoObjectScene};
use crate::numerics::{Matrix, RandomSource};
use crate::tokenmap::{KeywordConfig, TokenCell, TokenMap};
use crate::Result;

pub fn scene(rng: &mut RandomSource, relation: Relation) -> SceneFixture {
    SceneFixture::from(&TwoObjectScene::<f64>::random(rng, relation))
}

pub fn keywords() -> KeywordConfig {
    KeywordConfig::from_json(
        r#"{
            "objects": {
                "bear": ["bear", "head", "eye", "nose", "paw"],
                "tree": ["tree", "leaf", "branch"]
            },
            "representative": {"bear": ["bear"], "tree": ["tree"]},
            "attributes": {"bear": ["brown", "fur"], "tree": ["green"]},
            "colors": {"bear": [200, 120, 40], "tree": [30, 160, 60]},
            "synonyms": {
                "truck": ["truck", "pickup", "lorry", "hauler", "firetruck"],
                "bear": ["bear", "grizzly"]
            }
        }"#,
    )
    .expect("builtin keywords are valid")
}

/// 3×3 map whose unknown center has three "bear", one "paw" and four "." neighbors.
pub fn bear_tokenmap() -> TokenMap {
    TokenMap::from_tokens(3, 3, &["bear", ".", "bear", ".", "xx", ".", "bear", "paw", "."]).expect("valid map")
}

/// Two cells: "the" then ".".
pub fn punctuation_tokenmap() -> TokenMap {
    TokenMap::new(1, 2, vec![TokenCell::plain("the"), TokenCell::plain(".")]).expect("valid map")
}

pub fn punctuation_embeddings() -> Matrix<f64> {
    Matrix::from_rows(&[vec![1.0, 0.0, 2.0, -1.0], vec![0.5, 0.5, 0.5, 0.5]]).expect("finite")
}

/// A road scene where a lorry shows up only as a second candidate.
pub fn truck_tokenmap() -> TokenMap {
    TokenMap::new(
        2,
        2,
        vec![
            TokenCell::plain("road"),
            TokenCell::with_second("car", "lorry"),
            TokenCell::plain("road"),
            TokenCell::plain("sky"),
        ],
    )
    .expect("valid map")
}

pub const LENS_VOCAB: [&str; 14] = [
    "bear", "paw", "head", "fur", "brown", "tree", "leaf", "green", "sky", "grass", ".", ",", " ", "the",
];

/// Embeddings laid out as a bear (left), a tree (right), sky above and
/// grass below, with scattered punctuation; each row points along its
/// token's unembedding column plus noise.
#[derive(Debug, Clone)]
pub struct LensFixture {
    pub embeddings: Matrix<f64>,
    pub unembedding: Matrix<f64>,
    pub vocab: Vec<String>,
    pub height: usize,
    pub width: usize,
}

pub fn lens_fixture(rng: &mut RandomSource, height: usize, width: usize, dim: usize) -> Result<LensFixture> {
    let vocab: Vec<String> = LENS_VOCAB.iter().map(|s| s.to_string()).collect();
    let nv = vocab.len();
    let w_u = Matrix::new(dim, nv, rng.normal_vec(dim * nv))?;
    let id = |t: &str| LENS_VOCAB.iter().position(|&v| v == t).expect("token in vocab");
    let mut rows = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let fy = i as f64 / height as f64;
            let fx = j as f64 / width as f64;
            let region: &[&str] = if fy < 0.25 {
                &["sky"]
            } else if fy >= 0.8 {
                &["grass", "green"]
            } else if fx < 0.5 {
                &["bear", "bear", "fur", "brown", "paw", "head"]
            } else {
                &["tree", "leaf", "leaf", "green"]
            };
            let token = if rng.uniform(0.0, 1.0) < 0.1 {
                [".", ",", " ", "the"][rng.index(4)]
            } else {
                region[(i / 2 + j / 3) % region.len()]
            };
            let col = id(token);
            let row: Vec<f64> = (0..dim).map(|k| 0.6 * w_u.get(k, col) + 0.15 * rng.normal()).collect();
            rows.push(row);
        }
    }
    Ok(LensFixture {
        embeddings: Matrix::from_rows(&rows)?,
        unembedding: w_u,
        vocab,
        height,
        width,
    })
}

/// Teacher logits `V · W*`; the student starts from an unrelated small
/// unembedding `w_u`.
#[derive(Debug, Clone)]
pub struct LinearTeacher {
    pub w_star: Matrix<f64>,
    pub w_u: Matrix<f64>,
    pub v_train: Matrix<f64>,
    pub t_train: Matrix<f64>,
    pub v_val: Matrix<f64>,
    pub t_val: Matrix<f64>,
}

pub fn linear_teacher(rng: &mut RandomSource, dim: usize, vocab: usize, n_train: usize, n_val: usize) -> Result<LinearTeacher> {
    let mut gauss = |r: usize, c: usize, s: f64| Matrix::new(r, c, rng.normal_vec(r * c).into_iter().map(|x| x * s).collect());
    let w_star = gauss(dim, vocab, 0.75)?;
    let v_train = gauss(n_train, dim, 1.0)?;
    let v_val = gauss(n_val, dim, 1.0)?;
    let w_u = gauss(dim, vocab, 0.1)?;
    Ok(LinearTeacher {
        t_train: v_train.matmul(&w_star)?,
        t_val: v_val.matmul(&w_star)?,
        w_star,
        w_u,
        v_train,
        v_val,
    })
}
