//! Real-multiplication (RM) counts for antenna selection.
//!
//! Only multiplications are counted. Additions, activations and the softmax
//! exponentials are ignored, as are the comparisons of the COAS sort.

use std::fmt::Write as _;

use crate::channel::binomial;
use crate::error::{Error, Result};

/// RMs of one forward pass through a fully connected network whose input is
/// the stacked real/imaginary channel (`P = 2·N·N_R`) and whose output has
/// one neuron per antenna subset (`T = C(N_R, N_S)`):
/// `P·S_1 + T·S_L + Σ S_m·S_{m+1}`.
pub fn dnn_rm_count(n_reflectors: u64, n_rx: u64, n_sel: u64, layer_sizes: &[u64]) -> Result<u64> {
    let (first, last) = match (layer_sizes.first(), layer_sizes.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::arg("at least one hidden layer is required")),
    };
    let inputs = 2 * n_reflectors * n_rx;
    let outputs = binomial(n_rx as usize, n_sel as usize);
    let chain: u64 = layer_sizes.windows(2).map(|w| w[0] * w[1]).sum();
    Ok(inputs * first + outputs * last + chain)
}

/// RMs of COAS: `4·N` per squared column norm, for `N_R` columns.
pub fn coas_rm_count(n_reflectors: u64, n_rx: u64) -> u64 {
    4 * n_reflectors * n_rx
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityCase {
    pub name: String,
    pub layer_sizes: Vec<u64>,
    pub n_reflectors: u64,
    pub n_rx: u64,
    pub n_sel: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityRow {
    pub case: ComplexityCase,
    pub coas_rms: u64,
    pub dnn_rms: u64,
}

impl ComplexityCase {
    pub fn new(name: &str, layer_sizes: &[u64], n_reflectors: u64, n_rx: u64, n_sel: u64) -> Self {
        ComplexityCase {
            name: name.to_string(),
            layer_sizes: layer_sizes.to_vec(),
            n_reflectors,
            n_rx,
            n_sel,
        }
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn evaluate(&self) -> Result<ComplexityRow> {
        if self.n_reflectors == 0 || self.n_rx == 0 || self.n_sel == 0 || self.n_sel > self.n_rx {
            return Err(Error::config(format!("case {}: invalid dimensions", self.name)));
        }
        Ok(ComplexityRow {
            case: self.clone(),
            coas_rms: coas_rm_count(self.n_reflectors, self.n_rx),
            dnn_rms: dnn_rm_count(self.n_reflectors, self.n_rx, self.n_sel, &self.layer_sizes)?,
        })
    }
}

/// The three reference configurations: `(4,4)` hidden units on an 8-element
/// RIS with 4 choose 2 antennas, `(32,32,32)` on 16 elements, and four layers
/// of 256 on 64 elements with 8 choose 4.
pub fn reference_cases() -> Vec<ComplexityCase> {
    vec![
        ComplexityCase::new("Case 1", &[4, 4], 8, 4, 2),
        ComplexityCase::new("Case 2", &[32, 32, 32], 16, 4, 2),
        ComplexityCase::new("Case 3", &[256, 256, 256, 256], 64, 8, 4),
    ]
}

pub const CSV_HEADER: &str = "case,L,layer_sizes,N,N_R,N_S,coas_rms,dnn_rms";

/// Evaluates every case and renders the CSV table (header included).
/// Layer sizes are `;`-separated inside their column.
pub fn complexity_table(cases: &[ComplexityCase]) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for case in cases {
        let row = case.evaluate()?;
        let sizes: Vec<String> = case.layer_sizes.iter().map(u64::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            case.name,
            case.hidden_layers(),
            sizes.join(";"),
            case.n_reflectors,
            case.n_rx,
            case.n_sel,
            row.coas_rms,
            row.dnn_rms
        )
        .unwrap();
    }
    Ok(out)
}

/// Parses a cases file: optional header line `case,layer_sizes,N,N_R,N_S`,
/// then one case per line with `;`-separated layer sizes. `#` starts a
/// comment.
pub fn parse_cases(text: &str) -> Result<Vec<ComplexityCase>> {
    let bad = |line: usize, msg: &str| Error::Parse {
        what: "complexity cases",
        msg: format!("line {line}: {msg}"),
    };
    let mut cases = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() || line.starts_with("case,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad(i + 1, "expected 5 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(i + 1, &format!("not an integer: {s:?}")));
        let layer_sizes = fields[1]
            .split(';')
            .map(|s| num(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        cases.push(ComplexityCase {
            name: fields[0].to_string(),
            layer_sizes,
            n_reflectors: num(fields[2])?,
            n_rx: num(fields[3])?,
            n_sel: num(fields[4])?,
        });
    }
    Ok(cases)
}
