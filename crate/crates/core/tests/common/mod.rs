//! Helpers and reference implementations shared by the integration tests.
//! The reference implementations are written independently of the library
//! code they check: plain loops, no shared helpers.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ndarray::{Array2, Array3};
use objectadd::domain::Resolution;
use objectadd::{BinaryMask, Latent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tower::ServiceExt;

pub const WORDS: [&str; 16] = [
    "a", "red", "hat", "blue", "ball", "dog", "lawn", "green", "car", "street", "tall", "tree", "lake", "small",
    "boat", "the",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_prompt(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn normal_array(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), scale: f64) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_latent(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), t: usize, scale: f64) -> Latent {
    Latent::new(normal_array(rng, shape, scale), t).unwrap()
}

/// Random axis-aligned rectangle covering at least one cell.
pub fn random_rect_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), resolution: Resolution) -> BinaryMask {
    let (h, w) = shape;
    let top = rng.random_range(0..h);
    let left = rng.random_range(0..w);
    let bottom = rng.random_range(top + 1..=h);
    let right = rng.random_range(left + 1..=w);
    BinaryMask::from_fn(shape, resolution, |i, j| i >= top && i < bottom && j >= left && j < right)
}

pub fn random_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64, resolution: Resolution) -> BinaryMask {
    BinaryMask::from_fn(shape, resolution, |_, _| rng.random_bool(p))
}

fn neighbours8(i: usize, j: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for di in [-1i64, 0, 1] {
        for dj in [-1i64, 0, 1] {
            if di == 0 && dj == 0 {
                continue;
            }
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w {
                out.push((a as usize, b as usize));
            }
        }
    }
    out
}

fn cell_distance(x: &Array3<f64>, a: (usize, usize), b: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in 0..x.dim().2 {
        let d = x[[a.0, a.1, c]] - b[c];
        s += d * d;
    }
    s.sqrt()
}

/// Seed-anchored distance of `n` from `seed`: mean of the distance to the
/// seed and the distance to the mean of the seed's in-grid 3x3 block.
pub fn oracle_distance(x: &Array3<f64>, seed: (usize, usize), n: (usize, usize)) -> f64 {
    let (h, w, c) = x.dim();
    let seed_vec: Vec<f64> = (0..c).map(|k| x[[seed.0, seed.1, k]]).collect();
    let mut mean = seed_vec.clone();
    let mut count = 1.0;
    for (a, b) in neighbours8(seed.0, seed.1, h, w) {
        for k in 0..c {
            mean[k] += x[[a, b, k]];
        }
        count += 1.0;
    }
    for m in &mut mean {
        *m /= count;
    }
    0.5 * (cell_distance(x, n, &seed_vec) + cell_distance(x, n, &mean))
}

/// Brute-force region growing: every round, each background cell joins when
/// some foreground 8-neighbour (in the round-start mask) is within `h2`.
/// Returns the final mask and the number of cells flipped per round.
pub fn oracle_expand(mask: &Array2<u8>, x: &Array3<f64>, h2: f64) -> (Array2<u8>, Vec<usize>) {
    let (h, w) = mask.dim();
    let mut cur = mask.clone();
    let mut rounds = Vec::new();
    loop {
        let start = cur.clone();
        let mut flipped = 0;
        for i in 0..h {
            for j in 0..w {
                if start[[i, j]] == 1 {
                    continue;
                }
                let joins = neighbours8(i, j, h, w)
                    .into_iter()
                    .any(|s| start[[s.0, s.1]] == 1 && oracle_distance(x, s, (i, j)) < h2);
                if joins {
                    cur[[i, j]] = 1;
                    flipped += 1;
                }
            }
        }
        rounds.push(flipped);
        if flipped == 0 {
            return (cur, rounds);
        }
    }
}

/// Connected regions (4-neighbour) of cells equal to `value`, by stack flood
/// fill.
pub fn flood_regions(m: &Array2<u8>, value: u8) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = m.dim();
    let mut seen = vec![vec![false; w]; h];
    let mut regions = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if seen[i][j] || m[[i, j]] != value {
                continue;
            }
            let mut region = Vec::new();
            let mut stack = vec![(i, j)];
            seen[i][j] = true;
            while let Some((a, b)) = stack.pop() {
                region.push((a, b));
                let cand = [
                    (a as i64 - 1, b as i64),
                    (a as i64 + 1, b as i64),
                    (a as i64, b as i64 - 1),
                    (a as i64, b as i64 + 1),
                ];
                for (x, y) in cand {
                    if x < 0 || y < 0 || x as usize >= h || y as usize >= w {
                        continue;
                    }
                    let (x, y) = (x as usize, y as usize);
                    if !seen[x][y] && m[[x, y]] == value {
                        seen[x][y] = true;
                        stack.push((x, y));
                    }
                }
            }
            regions.push(region);
        }
    }
    regions
}

/// Drop foreground regions smaller than `min`, then fill background regions
/// that cannot be reached from the border.
pub fn oracle_cleanup(m: &Array2<u8>, min: usize) -> Array2<u8> {
    let (h, w) = m.dim();
    let mut out = m.clone();
    for r in flood_regions(m, 1) {
        if r.len() < min {
            for (a, b) in r {
                out[[a, b]] = 0;
            }
        }
    }
    // Border-reachable background by BFS from every border background cell.
    let mut outside = vec![vec![false; w]; h];
    let mut q = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if (i == 0 || j == 0 || i + 1 == h || j + 1 == w) && out[[i, j]] == 0 {
                outside[i][j] = true;
                q.push_back((i, j));
            }
        }
    }
    while let Some((a, b)) = q.pop_front() {
        let cand = [
            (a.wrapping_sub(1), b),
            (a + 1, b),
            (a, b.wrapping_sub(1)),
            (a, b + 1),
        ];
        for (x, y) in cand {
            if x < h && y < w && !outside[x][y] && out[[x, y]] == 0 {
                outside[x][y] = true;
                q.push_back((x, y));
            }
        }
    }
    for i in 0..h {
        for j in 0..w {
            if out[[i, j]] == 0 && !outside[i][j] {
                out[[i, j]] = 1;
            }
        }
    }
    out
}

/// Mean absolute difference over the channels of every pixel outside the
/// mask, divided by the total channel count.
pub fn oracle_by_pixels(a: &Array3<u8>, b: &Array3<u8>, mask: &Array2<u8>) -> f64 {
    let (h, w, c) = a.dim();
    let mut total = 0u64;
    for i in 0..h {
        for j in 0..w {
            if mask[[i, j]] != 0 {
                continue;
            }
            for k in 0..c {
                total += (a[[i, j, k]] as i64 - b[[i, j, k]] as i64).unsigned_abs();
            }
        }
    }
    total as f64 / (h * w * c) as f64
}

pub async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, headers)
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, serde_json::Value) {
    let (s, b, _) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

pub async fn post_json(app: &Router, uri: &str, body: &serde_json::Value) -> (StatusCode, serde_json::Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(body).unwrap()))
        .unwrap();
    let (s, b, _) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(serde_json::Value::Null))
}

/// Polls a job until it leaves the queued and running states.
pub async fn wait_for(app: &Router, id: &str) -> serde_json::Value {
    for _ in 0..600 {
        let (s, v) = get_json(app, &format!("/api/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} did not finish");
}
