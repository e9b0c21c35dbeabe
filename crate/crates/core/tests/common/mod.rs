//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use qfsum::nn::objective::{eval_loss, loss_and_grads};
use qfsum::nn::{Example, Model};
use qfsum::rouge::RougeScore;

/// All n-grams in order, duplicates kept.
pub fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Clipped n-gram overlap by linear counting.
pub fn brute_rouge_n(cand: &[String], reference: &[String], n: usize) -> RougeScore {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    if c.is_empty() || r.is_empty() {
        return RougeScore::default();
    }
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut matches = 0;
    for g in &c {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_c = c.iter().filter(|x| *x == g).count();
        let in_r = r.iter().filter(|x| *x == g).count();
        matches += in_c.min(in_r);
    }
    let p = matches as f64 / c.len() as f64;
    let rc = matches as f64 / r.len() as f64;
    RougeScore {
        precision: p,
        recall: rc,
        f1: f1(p, rc),
    }
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == *x))
}

/// LCS length by trying every subsequence of the shorter input.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "exhaustive LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&String> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &short[i])
            .collect();
        if sub.len() > best && is_subsequence(&sub, long) {
            best = sub.len();
        }
    }
    best
}

pub fn brute_rouge_l(cand: &[String], reference: &[String]) -> RougeScore {
    if cand.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let l = brute_lcs(cand, reference) as f64;
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    RougeScore {
        precision: p,
        recall: r,
        f1: f1(p, r),
    }
}

/// Attention rule of a local+global mask, written out directly.
pub fn rule_allows(i: usize, j: usize, window: usize, globals: &[usize]) -> bool {
    let d = i.abs_diff(j);
    (d as f64) <= window as f64 / 2.0 || globals.contains(&i) || globals.contains(&j)
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest relative error over every parameter scalar. Relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn max_relative_error(model: &Model, batch: &[Example]) -> f64 {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let (_, grads) = loss_and_grads(model, batch, 0, 0).unwrap();
    let mut m = model.clone();
    let names: Vec<String> = model.params.names().map(str::to_owned).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let n = m.params.get(&name).unwrap().data.len();
        for i in 0..n {
            let orig = m.params.get(&name).unwrap().data[i];
            m.params.get_mut(&name).unwrap().data[i] = orig + H;
            let up = eval_loss(&m, batch).unwrap();
            m.params.get_mut(&name).unwrap().data[i] = orig - H;
            let down = eval_loss(&m, batch).unwrap();
            m.params.get_mut(&name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.get(&name).map_or(0.0, |g| g.data[i]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
