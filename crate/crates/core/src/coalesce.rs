//! Splicing of two independently encoded prompts into one embedding, so the
//! base prompt and the object prompt never attend to each other inside the
//! text encoder.

use ndarray::{s, Array2};

use crate::domain::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Start token plus the base prompt's actual tokens, followed by every row of
/// the object prompt after its start token, truncated to the encoder window.
///
/// The base prompt's end token is dropped; the object prompt's end token and
/// pad tail are kept. Truncation only ever cuts pad rows: if the actual tokens
/// of both prompts plus start and end do not fit, this is an overflow.
pub fn coalesce(e_p: &EmbeddingMatrix, e_w: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let (n, d) = e_p.data().dim();
    if e_w.data().dim() != (n, d) {
        return Err(Error::Shape(format!(
            "embeddings differ in shape: {:?} vs {:?}",
            e_p.data().dim(),
            e_w.data().dim()
        )));
    }
    let n_p = e_p.actual_tokens();
    let n_w = e_w.actual_tokens();
    if n_p + n_w + 2 > n {
        return Err(Error::Overflow {
            needed: n_p + n_w + 2,
            window: n,
        });
    }

    let head = n_p + 1;
    let mut out = Array2::zeros((n, d));
    out.slice_mut(s![..head, ..])
        .assign(&e_p.data().slice(s![..head, ..]));
    out.slice_mut(s![head.., ..])
        .assign(&e_w.data().slice(s![1..n - n_p, ..]));
    EmbeddingMatrix::new(out, n_p + n_w)
}

/// Row of the object noun inside the coalesced embedding (0-based).
pub fn object_token_index(n_p: usize, object_word_offset: usize, window: usize) -> Result<usize> {
    let k = 1 + n_p + object_word_offset;
    if k >= window {
        return Err(Error::Overflow {
            needed: k + 1,
            window,
        });
    }
    Ok(k)
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Default object noun: the last token that is not an article, falling back
/// to the last token.
pub fn default_object_offset(tokens: &[String]) -> Option<usize> {
    tokens
        .iter()
        .rposition(|t| !ARTICLES.contains(&t.to_lowercase().as_str()))
        .or_else(|| tokens.len().checked_sub(1))
}
