//! Independent reference implementations and fixtures shared by the
//! integration tests. Oracles here use plain nested loops over raw slices and
//! never touch the graph engine.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resident::{Dataset, Example};

/// Row-major index helper for 3-D data.
fn at3(d: &[usize; 3], i: usize, j: usize, k: usize) -> usize {
    (i * d[1] + j) * d[2] + k
}

/// Same-padded 1-D convolution by direct summation.
/// `x` is (batch × len × c_in), `w` is (k × c_in × c_out).
pub fn conv_oracle(x: &[f64], dims: [usize; 3], w: &[f64], k: usize, c_out: usize, bias: &[f64]) -> Vec<f64> {
    let [batch, len, c_in] = dims;
    let left = (k - 1) / 2;
    let mut out = vec![0.0; batch * len * c_out];
    for b in 0..batch {
        for t in 0..len {
            for o in 0..c_out {
                let mut acc = bias[o];
                for j in 0..k {
                    let src = t as isize + j as isize - left as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for c in 0..c_in {
                        acc += x[at3(&dims, b, src as usize, c)] * w[(j * c_in + c) * c_out + o];
                    }
                }
                out[(b * len + t) * c_out + o] = acc;
            }
        }
    }
    out
}

/// Per-channel mean and biased variance over all rows of (rows × c) data.
pub fn channel_stats(x: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / c;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for r in 0..rows {
            s += x[r * c + ch];
        }
        mean[ch] = s / rows as f64;
        let mut v = 0.0;
        for r in 0..rows {
            let d = x[r * c + ch] - mean[ch];
            v += d * d;
        }
        var[ch] = v / rows as f64;
    }
    (mean, var)
}

pub fn bn_oracle(x: &[f64], c: usize, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]
        })
        .collect()
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `v (1 × n) · m (n × k)` for row-major m.
fn vecmat(v: &[f64], m: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (i, &vi) in v.iter().enumerate() {
        for j in 0..k {
            out[j] += vi * m[i * k + j];
        }
    }
    out
}

/// Raw GRU weights for the hand-gate oracle.
pub struct GruRaw<'a> {
    pub w: [&'a [f64]; 3],
    pub u: [&'a [f64]; 3],
    pub b: [&'a [f64]; 3],
    pub hidden: usize,
}

/// Hand-written GRU over a (steps × input) sequence; returns states indexed by
/// position.
pub fn gru_oracle(x: &[f64], input: usize, p: &GruRaw, h0: &[f64], reversed: bool) -> Vec<Vec<f64>> {
    let steps = x.len() / input;
    let hs = p.hidden;
    let mut h = h0.to_vec();
    let mut states = vec![Vec::new(); steps];
    let order: Vec<usize> = if reversed { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let xt = &x[t * input..(t + 1) * input];
        let xz = vecmat(xt, p.w[0], hs);
        let xr = vecmat(xt, p.w[1], hs);
        let xh = vecmat(xt, p.w[2], hs);
        let hz = vecmat(&h, p.u[0], hs);
        let hr = vecmat(&h, p.u[1], hs);
        let z: Vec<f64> = (0..hs).map(|j| sig(xz[j] + hz[j] + p.b[0][j])).collect();
        let r: Vec<f64> = (0..hs).map(|j| sig(xr[j] + hr[j] + p.b[1][j])).collect();
        let rh: Vec<f64> = (0..hs).map(|j| r[j] * h[j]).collect();
        let hc = vecmat(&rh, p.u[2], hs);
        let cand: Vec<f64> = (0..hs).map(|j| (xh[j] + hc[j] + p.b[2][j]).tanh()).collect();
        h = (0..hs).map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j]).collect();
        states[t] = h.clone();
    }
    states
}

/// Affine map plus softmax, one row at a time, normalizing by the row maximum.
pub fn dense_softmax_oracle(v: &[f64], inputs: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let mut out = Vec::with_capacity(v.len() / inputs * k);
    for row in v.chunks(inputs) {
        let mut logits = vecmat(row, w, k);
        for j in 0..k {
            logits[j] += b[j];
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|x| x / s));
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The 12-class test-set A confusion matrix of the best submitted run (rows
/// are gold labels, columns predicted).
pub const TABLE_A_LABELS: [&str; 12] = [
    "es-ar", "es-es", "es-mx", "fr-ca", "fr-fr", "id", "my", "pt-br", "pt-pt", "hr", "bs", "sr",
];
pub const TABLE_A: [[u64; 12]; 12] = [
    [824, 77, 94, 0, 1, 1, 0, 2, 1, 0, 0, 0],
    [90, 778, 127, 0, 1, 0, 0, 1, 2, 0, 1, 0],
    [210, 269, 520, 0, 0, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 0, 956, 44, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 93, 905, 0, 0, 1, 0, 1, 0, 0],
    [0, 0, 0, 0, 0, 951, 48, 0, 0, 0, 0, 1],
    [0, 0, 0, 0, 0, 30, 970, 0, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0, 891, 107, 1, 0, 0],
    [0, 1, 0, 0, 0, 0, 0, 78, 920, 0, 1, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 823, 150, 27],
    [0, 0, 0, 0, 1, 0, 0, 1, 0, 143, 730, 125],
    [0, 0, 0, 0, 1, 0, 0, 0, 0, 15, 67, 917],
];

/// Fifty tweet-like lines mixing links, user mentions and hashtags with
/// plain text, multibyte characters and odd spacing.
pub fn tweet_fixture() -> Vec<String> {
    let stems = [
        "Dobar dan svima",
        "Olá pessoal, tudo bem?",
        "Idemo na more sutra",
        "Que saudade do verão",
        "Šta ima novo kod vas",
        "Vou ao café às três",
        "Lijep pozdrav iz Zagreba",
        "Ćevapi su gotovi",
        "Não acredito nisso",
        "Ovo je đavolski dobro",
    ];
    let decor = [
        "{s} http://t.co/abc123",
        "@marko_92 {s}",
        "{s} #ljeto",
        "RT @ana: {s} https://example.org/x?y=1 #fb",
        "  {s}   www.site.hr/p  ",
    ];
    let mut out = Vec::with_capacity(50);
    for (i, s) in stems.iter().enumerate() {
        for (j, d) in decor.iter().enumerate() {
            let line = d.replace("{s}", s);
            out.push(if (i + j) % 7 == 0 { format!("{line} #tag{i}") } else { line });
        }
    }
    out
}

/// A family of synthetic "languages": each group shares a byte-bigram Markov
/// chain. Two groups contain pairs that differ only in which two-byte
/// character stands for one symbol; the third pair uses two perturbed copies
/// of its group chain.
pub struct SyntheticLanguages {
    pub codes: Vec<&'static str>,
    pub groups: Vec<Vec<&'static str>>,
    chains: Vec<Vec<Vec<f64>>>,
    renderings: Vec<Vec<&'static str>>,
}

const LETTERS: [&str; 20] = [
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "r", "s", "t", " ",
];
const SPECIAL_FLOOR: f64 = 0.08;

fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(4) + 1e-3).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v *= (1.0 - SPECIAL_FLOOR) / s);
            // The last symbol is the group's special one.
            row[n - 1] += SPECIAL_FLOOR;
            row
        })
        .collect()
}

fn mix(a: &[Vec<f64>], b: &[Vec<f64>], wa: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| wa * x + (1.0 - wa) * y).collect())
        .collect()
}

impl SyntheticLanguages {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = LETTERS.len() + 1;
        let base: Vec<_> = (0..3).map(|_| random_chain(&mut rng, n)).collect();
        let third_a = mix(&base[2], &random_chain(&mut rng, n), 0.5);
        let third_b = mix(&base[2], &random_chain(&mut rng, n), 0.5);
        let render = |special: &'static str| {
            let mut r: Vec<&'static str> = LETTERS.to_vec();
            r.push(special);
            r
        };
        SyntheticLanguages {
            codes: vec!["aa-x", "aa-y", "bb-x", "bb-y", "cc-x", "cc-y"],
            groups: vec![vec!["aa-x", "aa-y"], vec!["bb-x", "bb-y"], vec!["cc-x", "cc-y"]],
            chains: vec![base[0].clone(), base[0].clone(), base[1].clone(), base[1].clone(), third_a, third_b],
            renderings: vec![render("ä"), render("æ"), render("ö"), render("ø"), render("z"), render("z")],
        }
    }

    pub fn group_of(&self, code: &str) -> usize {
        self.groups.iter().position(|g| g.contains(&code)).expect("known code")
    }

    pub fn sentence(&self, lang: usize, rng: &mut ChaCha8Rng) -> String {
        let chain = &self.chains[lang];
        let render = &self.renderings[lang];
        let len = rng.gen_range(40..=100);
        let mut state = rng.gen_range(0..chain.len());
        let mut out = String::new();
        for _ in 0..len {
            out.push_str(render[state]);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut next = chain.len() - 1;
            for (j, p) in chain[state].iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        out.trim().to_string()
    }

    /// `per_language` sentences for each language, interleaved by language.
    pub fn dataset(&self, per_language: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut examples = Vec::with_capacity(per_language * self.codes.len());
        for _ in 0..per_language {
            for (lang, code) in self.codes.iter().enumerate() {
                examples.push(Example::new(self.sentence(lang, &mut rng), *code));
            }
        }
        Dataset::new(examples)
    }
}

/// Two trivially separable classes: one made of 'a'/'b' runs, the other of
/// 'x'/'y' runs.
pub fn two_class_toy(per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    for _ in 0..per_class {
        for (label, alphabet) in [("left", ['a', 'b']), ("right", ['x', 'y'])] {
            let len = rng.gen_range(8..=24);
            let text: String = (0..len).map(|_| alphabet[rng.gen_range(0..2)]).collect();
            examples.push(Example::new(text, label));
        }
    }
    Dataset::new(examples)
}

pub mod cases {
    //! One random-shape comparison per call; each returns the largest
    //! absolute deviation between the engine and its oracle.
    use super::*;
    use resident::autodiff::Graph;
    use resident::nn::{dense_softmax, gru_sequence, DenseParams, GruParams};
    use resident::Tensor;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform(shape, -1.0, 1.0, rng)
    }

    pub fn conv(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, l, ci, co, k) = (
            rng.gen_range(1..4),
            rng.gen_range(1..14),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
            rng.gen_range(1..10),
        );
        let (x, w, bias) = (rand_t(&[b, l, ci], &mut rng), rand_t(&[k, ci, co], &mut rng), rand_t(&[co], &mut rng));
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(bias.clone()));
        let y = g.conv1d_same(xv, wv, bv).unwrap();
        assert_eq!(g.shape(y), [b, l, co]);
        let want = conv_oracle(x.data(), [b, l, ci], w.data(), k, co, bias.data());
        max_abs_diff(g.value(y).data(), &want)
    }

    /// Train-mode output and batch statistics, then Infer mode with random
    /// running statistics.
    pub fn batch_norm(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, l, c) = (rng.gen_range(1..4), rng.gen_range(2..10), rng.gen_range(1..6));
        let x = Tensor::uniform(&[b, l, c], -3.0, 3.0, &mut rng);
        let gamma = Tensor::uniform(&[c], 0.5, 2.0, &mut rng);
        let beta = rand_t(&[c], &mut rng);
        let (rm, rv) = (rand_t(&[c], &mut rng), Tensor::uniform(&[c], 0.1, 2.0, &mut rng));
        let eps = 1e-5;

        let mut g = Graph::new();
        let (xv, gv, bv) = (g.input(x.clone()), g.input(gamma.clone()), g.input(beta.clone()));
        let (y, stats) = g.batch_norm_train(xv, gv, bv, eps).unwrap();
        let (mean, var) = channel_stats(x.data(), c);
        let want = bn_oracle(x.data(), c, gamma.data(), beta.data(), &mean, &var, eps);
        let yi = g.batch_norm_infer(xv, gv, bv, rm.data(), rv.data(), eps).unwrap();
        let want_i = bn_oracle(x.data(), c, gamma.data(), beta.data(), rm.data(), rv.data(), eps);
        [
            max_abs_diff(&stats.mean, &mean),
            max_abs_diff(&stats.var, &var),
            max_abs_diff(g.value(y).data(), &want),
            max_abs_diff(g.value(yi).data(), &want_i),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn random_gru(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruParams {
        let mut p = GruParams::init("g", input, hidden, rng);
        for q in p.params_mut() {
            q.value = Tensor::uniform(q.value.shape(), -0.8, 0.8, rng);
        }
        p
    }

    pub fn raw(p: &GruParams) -> GruRaw<'_> {
        GruRaw {
            w: [p.w_z.value.data(), p.w_r.value.data(), p.w_h.value.data()],
            u: [p.u_z.value.data(), p.u_r.value.data(), p.u_h.value.data()],
            b: [p.b_z.value.data(), p.b_r.value.data(), p.b_h.value.data()],
            hidden: p.hidden(),
        }
    }

    /// All states and the final state, in both directions.
    pub fn gru(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, d, h) = (rng.gen_range(1..9), rng.gen_range(1..6), rng.gen_range(1..6));
        let p = random_gru(d, h, &mut rng);
        let x = rand_t(&[t, d], &mut rng);
        let h0 = Tensor::uniform(&[h], -0.5, 0.5, &mut rng);
        let mut worst: f64 = 0.0;
        for reversed in [false, true] {
            let mut g = Graph::new();
            let (xv, hv) = (g.input(x.clone()), g.input(h0.clone()));
            let out = gru_sequence(&mut g, xv, &p, hv, reversed, None).unwrap();
            let want = gru_oracle(x.data(), d, &raw(&p), h0.data(), reversed);
            worst = worst.max(max_abs_diff(g.value(out.states).data(), &want.concat()));
            let last = if reversed { &want[0] } else { &want[t - 1] };
            worst = worst.max(max_abs_diff(g.value(out.last).data(), last));
        }
        worst
    }

    pub fn dense_softmax_case(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, n, k) = (rng.gen_range(1..5), rng.gen_range(1..8), rng.gen_range(2..8));
        let mut p = DenseParams::init("d", n, k, &mut rng);
        p.b.value = rand_t(&[k], &mut rng);
        let v = Tensor::uniform(&[rows, n], -4.0, 4.0, &mut rng);
        let mut g = Graph::new();
        let vv = g.input(v.clone());
        let y = dense_softmax(&mut g, vv, &p).unwrap();
        let want = dense_softmax_oracle(v.data(), n, p.w.value.data(), p.b.value.data());
        max_abs_diff(g.value(y).data(), &want)
    }
}
