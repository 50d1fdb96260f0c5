use xmodal_demo::{harmonic_points, rank_lines, run_training};

#[test]
fn training_demo_aligns_spaces() {
    let out = run_training(300, 16, 64, 0.05, 5, 1e-3, 0).unwrap();
    assert_eq!(out.epoch_losses.len(), 5);
    assert_eq!(out.held_out, 60);
    assert!(out.raw_accuracy <= 0.1, "{out:?}");
    assert!(out.projected_accuracy > 0.5, "{out:?}");
}

#[test]
fn training_demo_reports_bad_input() {
    assert!(run_training(1, 16, 8, 0.0, 1, 1e-3, 0).is_err());
    assert!(run_training(20, 4, 0, 0.0, 1, 1e-3, 0).is_err());
}

#[test]
fn ranks_lines_by_bm25() {
    let corpus = "the cat sat\n\nthe dog ran\ncat and dog\n";
    let ranked = rank_lines(corpus, "cat dog", 1.5, 0.75).unwrap();
    assert_eq!(ranked.len(), 3);
    assert_eq!(ranked[0].line, 4);
    assert_eq!(ranked[0].text, "cat and dog");
    assert!(ranked.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(rank_lines("\n \n", "cat", 1.5, 0.75).is_err());
}

#[test]
fn harmonic_curve_spans_range() {
    let pts = harmonic_points(0.6591, 1.0, 1000.0, 4).unwrap();
    assert_eq!(pts.len(), 4);
    assert!((pts[0].0 - 1.0).abs() < 1e-12 && (pts[3].0 - 1000.0).abs() < 1e-9);
    assert!(pts.windows(2).all(|w| w[1].1 > w[0].1));
    assert!(pts.iter().all(|&(_, h)| h < 2.0 * 0.6591));
    assert!(harmonic_points(0.5, 10.0, 1.0, 5).is_err());
}
