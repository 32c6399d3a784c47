use autous_agent::assessment::{meteor, meteor_detail, MeteorParams};

/// Hand evaluation of the scoring formula for given counts.
fn oracle(m: usize, chunks: usize, hyp_len: usize, ref_len: usize) -> f64 {
    let p = m as f64 / hyp_len as f64;
    let r = m as f64 / ref_len as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

const TEN: &str = "solid hypoechoic nodule with irregular margins and posterior acoustic shadowing";

#[test]
fn identical_sentences() {
    let p = MeteorParams::default();
    let d = meteor_detail(TEN, TEN, &p).unwrap();
    assert_eq!((d.matches, d.chunks), (10, 1));
    assert!((d.score - 0.9995).abs() < 1e-6);
    assert!((d.score - oracle(10, 1, 10, 10)).abs() < 1e-12);
}

#[test]
fn disjoint_sentences() {
    let s = meteor("alpha beta gamma delta", "one two three four five", &MeteorParams::default()).unwrap();
    assert_eq!(s, 0.0);
}

#[test]
fn reversed_sentence() {
    let reversed: Vec<&str> = TEN.split(' ').rev().collect();
    let d = meteor_detail(&reversed.join(" "), TEN, &MeteorParams::default()).unwrap();
    // Every adjacent pair in the reversal is out of order, so each match is its own chunk.
    assert_eq!((d.matches, d.chunks), (10, 10));
    assert!((d.score - 0.5).abs() < 1e-6);
    assert!((d.score - oracle(10, 10, 10, 10)).abs() < 1e-12);
}

#[test]
fn partial_overlap_against_oracle() {
    let h = "irregular hypoechoic mass with shadowing";
    let r = "hypoechoic mass with irregular margins and shadowing";
    let d = meteor_detail(h, r, &MeteorParams::default()).unwrap();
    // Matches: irregular, hypoechoic mass with (one run), shadowing.
    assert_eq!((d.matches, d.chunks), (5, 3));
    assert!((d.score - oracle(5, 3, 5, 7)).abs() < 1e-12);
}
