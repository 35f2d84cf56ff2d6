//! Built-in consistency checks shared by the `selfcheck` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{grad_check, Embedding, EncoderBlock, GradCheckReport, Mat, ParamStore};
use crate::sfc_codec::{decode, encode, CurveCode, CurveKind, CurveOrder};
use crate::sta_fusion::{StaConfig, StaFusion};

/// Largest relative error accepted by the gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Round-trip every code of every curve kind at `dims`/`bits`; returns the number of codes checked.
///
/// `encode(decode(c)) == c` over the whole code space makes `decode` injective
/// and, both sides having `2^(dims*bits)` elements, a bijection.
pub fn codec_round_trip(dims: u32, bits: u32) -> Result<u64> {
    let mut checked = 0;
    for kind in CurveKind::ALL {
        let order = CurveOrder::new(kind, dims, bits)?;
        let mut seen = vec![false; order.code_space() as usize];
        for code in 0..order.code_space() {
            let cells = decode(CurveCode(code), &order)?;
            let back = encode(&cells, &order)?;
            if back.0 != code {
                return Err(Error::Numeric(format!("{kind} {dims}-D b={bits}: code {code} -> {cells:?} -> {}", back.0)));
            }
            // the decoded cells, read as a row-major index, must all differ
            let flat = cells.iter().fold(0u64, |acc, &c| (acc << bits) | u64::from(c)) as usize;
            if std::mem::replace(&mut seen[flat], true) {
                return Err(Error::Numeric(format!("{kind} {dims}-D b={bits}: cell {cells:?} decoded twice")));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Consecutive Hilbert codes on the full 2-D grid that are not unit steps apart.
pub fn hilbert_adjacency_violations(bits: u32) -> Result<u64> {
    let order = CurveOrder::new(CurveKind::Hilbert, 2, bits)?;
    let mut prev = decode(CurveCode(0), &order)?;
    let mut bad = 0;
    for code in 1..order.code_space() {
        let cur = decode(CurveCode(code), &order)?;
        let dist: u32 = prev.iter().zip(&cur).map(|(a, b)| a.abs_diff(*b)).sum();
        if dist != 1 {
            bad += 1;
        }
        prev = cur;
    }
    Ok(bad)
}

fn rand_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Nonzero biases and affine norms so every parameter is exercised.
fn jitter_all(store: &mut ParamStore, rng: &mut impl Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        if name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".gamma") {
            store.get_mut(id).mapv_inplace(|v| v + 0.2 * rng.gen_range(-1.0..1.0));
        }
    }
}

/// Encoder block, `C = 8`, `N = 32`, split into two patches.
pub fn grad_check_encoder_block() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    let block = EncoderBlock::new(&mut store, "block", 8, 2, 4, &mut rng)?;
    jitter_all(&mut store, &mut rng);
    let x = rand_mat(32, 8, &mut rng);
    let target = rand_mat(32, 8, &mut rng);
    let mut order: Vec<usize> = (0..32).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let patches = [0..20, 20..32];
    grad_check(&store, 1e-5, |ctx| {
        let out = block.forward_patches(ctx, &ctx.constant(x.clone()), &order, &patches)?;
        Ok(out.sub(&ctx.constant(target.clone())).sum_squares())
    })
}

/// Cross attention, four mutual rounds and the interaction stage, `C = 4`, `N = 8`.
pub fn grad_check_sta() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut store = ParamStore::new();
    let cfg = StaConfig { channels: 4, seq_len: 8, rounds: 4, fc_hidden: 8 };
    let sta = StaFusion::new(&mut store, "sta", cfg, &mut rng)?;
    jitter_all(&mut store, &mut rng);
    let (fs, ft, fst) = (rand_mat(8, 4, &mut rng), rand_mat(8, 4, &mut rng), rand_mat(8, 4, &mut rng));
    let target = rand_mat(8, 8, &mut rng);
    grad_check(&store, 1e-5, |ctx| {
        let out = sta.forward(ctx, &ctx.constant(fs.clone()), &ctx.constant(ft.clone()), &ctx.constant(fst.clone()))?;
        Ok(out.sub(&ctx.constant(target.clone())).sum_squares())
    })
}

/// Point embedding `5 -> 8` on 16 points.
pub fn grad_check_embed() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let mut store = ParamStore::new();
    let embed = Embedding::new(&mut store, "embed", 8, &mut rng);
    jitter_all(&mut store, &mut rng);
    let x = rand_mat(16, 5, &mut rng);
    let target = rand_mat(16, 8, &mut rng);
    grad_check(&store, 1e-5, |ctx| {
        Ok(embed.forward(ctx, &ctx.constant(x.clone())).sub(&ctx.constant(target.clone())).sum_squares())
    })
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn line(name: &str, outcome: Result<(bool, String)>) -> CheckLine {
    match outcome {
        Ok((passed, detail)) => CheckLine { name: name.into(), passed, detail },
        Err(e) => CheckLine { name: name.into(), passed: false, detail: e.to_string() },
    }
}

fn grad_line(name: &str, report: Result<GradCheckReport>) -> CheckLine {
    line(
        name,
        report.map(|r| (r.max_rel_error < GRAD_TOLERANCE, format!("{} params, max rel error {:.2e}", r.params_checked, r.max_rel_error))),
    )
}

/// Every check; `quick` shrinks the exhaustive codec sweeps.
pub fn run_all(quick: bool) -> Vec<CheckLine> {
    let (b2, b3, badj) = if quick { (6, 4, 6) } else { (10, 6, 8) };
    let codec = |dims, bits| {
        line(&format!("codec {dims}-D b={bits} round trip"), codec_round_trip(dims, bits).map(|n| (true, format!("{n} codes"))))
    };
    vec![
        codec(2, b2),
        codec(3, b3),
        line(
            &format!("hilbert adjacency b={badj}"),
            hilbert_adjacency_violations(badj).map(|v| (v == 0, format!("{v} violations"))),
        ),
        grad_line("gradient encoder block", grad_check_encoder_block()),
        grad_line("gradient fusion stack", grad_check_sta()),
        grad_line("gradient embedding", grad_check_embed()),
    ]
}
