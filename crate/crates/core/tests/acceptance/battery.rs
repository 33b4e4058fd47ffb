//! The 20-case oracle battery: histories of length 1-10 at cycle scales
//! 20-40, with and without injected skips, under several population
//! priors. Every case was checked to keep the Monte-Carlo estimators
//! statistically resolvable against the quadrature oracle at M = 1e5
//! (importance effective sample sizes from ~3.5e3 to ~7.5e4).

use cyclemodel::data::CycleHistory;
use cyclemodel::model::Hyperparameters;

pub const BATTERY_S_MAX: u32 = 10;
pub const BATTERY_MC_SAMPLES: usize = 100_000;

pub struct BatteryCase {
    pub name: &'static str,
    pub history: CycleHistory,
    pub u: Hyperparameters,
}

fn case(name: &'static str, cycles: Vec<u32>, u: Hyperparameters) -> BatteryCase {
    BatteryCase {
        name,
        history: CycleHistory::new(name, cycles).expect("valid battery history"),
        u,
    }
}

pub fn battery() -> Vec<BatteryCase> {
    let u0 = Hyperparameters::informative_default();
    let ua = Hyperparameters::new(120.0, 4.0, 1.0, 9.0).unwrap();
    let ub = Hyperparameters::new(240.0, 8.0, 3.0, 17.0).unwrap();
    let uc = Hyperparameters::new(90.0, 3.0, 1.0, 6.0).unwrap();
    let ud = Hyperparameters::new(150.0, 5.0, 4.0, 16.0).unwrap();
    vec![
        case(
            "b01_short_scale",
            vec![23, 22, 24, 21, 23, 22, 24, 23, 22, 23],
            u0,
        ),
        case(
            "b02_long_scale",
            vec![37, 38, 36, 39, 37, 38, 36, 37, 39, 38],
            u0,
        ),
        case(
            "b03_low_two_skips",
            vec![26, 27, 25, 54, 26, 25, 27, 53, 26, 25],
            u0,
        ),
        case(
            "b04_high_two_skips",
            vec![35, 34, 36, 70, 35, 36, 34, 71, 36, 35],
            u0,
        ),
        case(
            "b05_double_skip",
            vec![26, 25, 53, 27, 26, 52, 25, 80, 26, 25],
            u0,
        ),
        case("b06_five_long", vec![40, 39, 41, 40, 38], u0),
        case("b07_five_short", vec![20, 21, 20, 19, 21], u0),
        case("b08_five_skips", vec![30, 61, 29, 62, 31], u0),
        case("b09_single_cycle", vec![55], u0),
        case("b10_reference_pair", vec![30, 62], u0),
        case(
            "b11_flat_prior_clean",
            vec![24, 25, 23, 24, 26, 25, 24, 23],
            ua,
        ),
        case(
            "b12_flat_prior_skip",
            vec![36, 35, 37, 36, 34, 73, 36, 35],
            ua,
        ),
        case("b13_flat_prior_short", vec![26, 27, 25, 26], ua),
        case(
            "b14_tight_prior_skip",
            vec![33, 34, 35, 34, 33, 34, 66, 34],
            ub,
        ),
        case(
            "b15_tight_prior_clean",
            vec![26, 25, 27, 26, 25, 24, 26, 25, 27, 26],
            ub,
        ),
        case(
            "b16_skippy_prior_clean",
            vec![30, 31, 29, 30, 32, 29, 31, 30, 29, 31],
            ud,
        ),
        case(
            "b17_skippy_prior_half",
            vec![28, 56, 27, 57, 29, 55, 28, 58, 27, 56],
            ud,
        ),
        case("b18_wide_prior_skip", vec![38, 39, 37, 76, 38], uc),
        case("b19_wide_prior_low", vec![22, 21, 45, 23, 22, 44, 21], uc),
        case(
            "b20_triple_length",
            vec![25, 24, 26, 23, 75, 25, 24, 26, 25, 24],
            u0,
        ),
    ]
}
