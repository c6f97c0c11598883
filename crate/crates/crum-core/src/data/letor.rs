//! LETOR/svmlight text format: `<label> qid:<id> <index>:<value> ...` with
//! 1-based sparse feature indices and optional `#` comments.

use super::{Dataset, Item, RankedRequest};
use crate::error::{CrumError, Result};
use crate::perm::Permutation;
use crate::scalar::{lit, upcast, Scalar};
use std::collections::BTreeMap;

/// Parses LETOR text, inferring the feature dimension as the largest feature
/// index present. Lines with the same qid form one request (in first-seen
/// order); items take list positions in file order; absent sparse indices
/// default to 0.
pub fn parse_letor<S: Scalar>(text: &str) -> Result<Dataset<S>> {
    parse_letor_with_dim(text, None)
}

/// Parses LETOR text against an explicit feature dimension. A feature index
/// above the declared dimension is a schema error.
pub fn parse_letor_with_dim<S: Scalar>(text: &str, feature_dim: Option<usize>) -> Result<Dataset<S>> {
    struct RawItem {
        qid: String,
        label: u8,
        features: Vec<(usize, f64)>,
    }

    let mut raw: Vec<RawItem> = Vec::new();
    let mut max_index = 0usize;

    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();

        let label_tok = tokens.next().ok_or_else(|| parse_err(line_no, "missing label"))?;
        let label: u8 = label_tok
            .parse()
            .map_err(|_| parse_err(line_no, &format!("label '{label_tok}' is not an integer grade")))?;
        if label > 4 {
            return Err(parse_err(line_no, &format!("grade {label} outside 0..=4")));
        }

        let qid_tok = tokens.next().ok_or_else(|| parse_err(line_no, "missing qid field"))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .ok_or_else(|| parse_err(line_no, &format!("expected qid:<id>, found '{qid_tok}'")))?;
        if qid.is_empty() {
            return Err(parse_err(line_no, "empty qid"));
        }

        let mut features = Vec::new();
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, &format!("expected <index>:<value>, found '{tok}'")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| parse_err(line_no, &format!("feature index '{idx_s}' is not an integer")))?;
            if idx == 0 {
                return Err(parse_err(line_no, "feature indices are 1-based"));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| parse_err(line_no, &format!("feature value '{val_s}' is not a number")))?;
            if let Some(d) = feature_dim {
                if idx > d {
                    return Err(CrumError::Schema(format!(
                        "line {line_no}: feature index {idx} above declared dimension {d}"
                    )));
                }
            }
            max_index = max_index.max(idx);
            features.push((idx, val));
        }

        raw.push(RawItem {
            qid: qid.to_string(),
            label,
            features,
        });
    }

    let d = feature_dim.unwrap_or(max_index);

    // Group lines by qid, requests ordered by first appearance.
    let mut request_of_qid: BTreeMap<String, usize> = BTreeMap::new();
    let mut grouped: Vec<(String, Vec<RawItem>)> = Vec::new();
    for item in raw {
        match request_of_qid.get(&item.qid) {
            Some(&idx) => grouped[idx].1.push(item),
            None => {
                request_of_qid.insert(item.qid.clone(), grouped.len());
                let qid = item.qid.clone();
                grouped.push((qid, vec![item]));
            }
        }
    }

    let mut requests = Vec::with_capacity(grouped.len());
    let mut n_max = 0usize;
    for (qid, lines) in grouped {
        let n = lines.len();
        n_max = n_max.max(n);
        let items = lines
            .into_iter()
            .map(|line| {
                let mut dense = vec![S::zero(); d];
                for (idx, val) in line.features {
                    dense[idx - 1] = lit(val);
                }
                Item {
                    features: dense,
                    bid: S::one(),
                    graded_label: line.label,
                    binary_label: 0,
                }
            })
            .collect();
        requests.push(RankedRequest {
            request_id: qid,
            items,
            initial_positions: Permutation::identity(n),
            clicks: None,
        });
    }

    Dataset::new(requests, d, n_max.max(1))
}

fn parse_err(line: usize, message: &str) -> CrumError {
    CrumError::Parse {
        line,
        message: message.to_string(),
    }
}

/// Serializes a dataset back to LETOR text with dense 1-based features, one
/// item per line, requests in order, items in display-position order.
pub fn to_letor_string<S: Scalar>(dataset: &Dataset<S>) -> String {
    let mut out = String::new();
    for request in &dataset.requests {
        for &i in &request.initial_positions.order() {
            let item = &request.items[i];
            out.push_str(&format!("{} qid:{}", item.graded_label, request.request_id));
            for (j, &v) in item.features.iter().enumerate() {
                out.push_str(&format!(" {}:{}", j + 1, upcast(v)));
            }
            out.push('\n');
        }
    }
    out
}
