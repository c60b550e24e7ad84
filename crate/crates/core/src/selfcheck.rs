//! A few seconds' worth of invariant checks, runnable from the CLI.
//!
//! The full statistical and training checks live in the acceptance target;
//! these are the cheap ones worth running on any machine before a long sweep.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{binomial, coas_select, label_to_subset, subset_label, ChannelMatrix};
use crate::complexity::reference_cases;
use crate::dnn::{forward, loss_and_gradients, MlpParams};
use crate::phy::{ris_phases, Modem, SystemConfig};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check { name, passed: true, detail },
        Err(detail) => Check { name, passed: false, detail },
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("complexity reference values", complexity_values()),
        check("subset labels bijective", labels_bijective()),
        check("coas matches brute force", coas_brute_force()),
        check("noiseless loopback", noiseless_loopback()),
        check("softmax normalised", softmax_normalised()),
        check("gradient vs finite diff", gradient_check()),
    ]
}

fn complexity_values() -> Result<String, String> {
    let got: Vec<(u64, u64)> = reference_cases()
        .iter()
        .map(|c| c.evaluate().map(|r| (r.coas_rms, r.dnn_rms)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let want = [(128, 296), (256, 6336), (2048, 476_672)];
    if got == want {
        Ok(format!("{got:?}"))
    } else {
        Err(format!("got {got:?}, want {want:?}"))
    }
}

fn labels_bijective() -> Result<String, String> {
    let mut pairs = 0;
    for n_rx in 1..=8 {
        for n_s in 1..=n_rx {
            for label in 1..=binomial(n_rx, n_s) as usize {
                let subset = label_to_subset(label, n_rx, n_s).map_err(|e| e.to_string())?;
                let back = subset_label(&subset, n_rx, n_s).map_err(|e| e.to_string())?;
                if back != label {
                    return Err(format!("N_R={n_rx} N_S={n_s}: {label} -> {subset:?} -> {back}"));
                }
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} labels"))
}

fn coas_brute_force() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 2000;
    for t in 0..trials {
        let n_rx = [2, 4, 8][t % 3];
        let n_s = [1, 2, 4][t % 3].min(n_rx);
        let h = ChannelMatrix::sample(4, n_rx, &mut rng).map_err(|e| e.to_string())?;
        let sel = coas_select(&h, n_s).map_err(|e| e.to_string())?;
        let energy = |idx: &[usize]| idx.iter().map(|&r| h.column_norm_sqr(r - 1)).sum::<f64>();
        let best = (1..=binomial(n_rx, n_s) as usize)
            .map(|l| label_to_subset(l, n_rx, n_s).unwrap())
            .map(|s| energy(&s))
            .fold(f64::NEG_INFINITY, f64::max);
        if energy(sel.subset().indices()) < best {
            return Err(format!("trial {t}: coas energy below exhaustive best"));
        }
    }
    Ok(format!("{trials} matrices"))
}

fn noiseless_loopback() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut messages = 0;
    for &m in &[4, 8, 16] {
        for &n in &[2, 8, 16] {
            let modem = Modem::new(SystemConfig::new(m, n, 4, 2).with_noise_variance(0.0)).map_err(|e| e.to_string())?;
            let h = ChannelMatrix::sample(n, 4, &mut rng).map_err(|e| e.to_string())?;
            let sel = coas_select(&h, 2).map_err(|e| e.to_string())?;
            let eta = modem.bits_per_frame();
            for word in 0..1u32 << eta {
                let bits: Vec<u8> = (0..eta).rev().map(|b| ((word >> b) & 1) as u8).collect();
                let frame = modem.map_bits(&bits).map_err(|e| e.to_string())?;
                let phases = ris_phases(&sel, frame.l_re, frame.l_im).map_err(|e| e.to_string())?;
                let y = modem.transmit_receive(&sel, &frame, &phases, &mut rng).map_err(|e| e.to_string())?;
                let d = modem.ml_detect(&y, &sel).map_err(|e| e.to_string())?;
                if modem.demap_bits(d.l_re, d.l_im, d.symbol_index) != bits {
                    return Err(format!("M={m} N={n}: message {word:#b} not recovered"));
                }
                messages += 1;
            }
        }
    }
    Ok(format!("{messages} messages"))
}

fn softmax_normalised() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = MlpParams::init(&[16, 32, 32, 6], &mut rng).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = forward(&params, &x).map_err(|e| e.to_string())?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(format!("probabilities sum to {sum}"));
        }
    }
    Ok("100 inputs".into())
}

fn gradient_check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut params = MlpParams::init(&[4, 5, 3], &mut rng).map_err(|e| e.to_string())?;
    for layer in params.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..6).map(|i| i % 3 + 1).collect();
    let (_, grads) = loss_and_gradients(&params, x.view(), &labels).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for li in 0..params.layers().len() {
        let shape = params.layers()[li].weights.dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let w0 = params.layers()[li].weights[[i, j]];
                params.layers_mut()[li].weights[[i, j]] = w0 + h;
                let lp = loss_and_gradients(&params, x.view(), &labels).unwrap().0;
                params.layers_mut()[li].weights[[i, j]] = w0 - h;
                let lm = loss_and_gradients(&params, x.view(), &labels).unwrap().0;
                params.layers_mut()[li].weights[[i, j]] = w0;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.layers()[li].weights[[i, j]];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
            }
        }
    }
    if worst < 1e-5 {
        Ok(format!("max relative error {worst:.1e}"))
    } else {
        Err(format!("max relative error {worst:.1e}"))
    }
}
