// Throwaway scale probe; deleted before finalizing.

use apdfit::diagram::DiagramParams;
use apdfit::dilpm;
use apdfit::metrics;
use apdfit::stats;
use apdfit::support;
use apdfit::synth;
use apdfit::transport;

#[test]
#[ignore]
fn probe_transport_64() {
    let t0 = std::time::Instant::now();
    let (scan, truth) = synth::synth_scan(20, (64, 64, 64), (1.0, 1.0, 1.0), 42).unwrap();
    eprintln!("synth: {:?}", t0.elapsed());

    let t0 = std::time::Instant::now();
    let field = stats::compute_boundary_distance(&scan);
    let sup = support::full_support(&scan, &field);
    eprintln!("support build: {:?} ({} points)", t0.elapsed(), sup.len());

    let model = transport::SiteModel::from_diagram(&truth);
    let counts = scan.label_counts();
    let targets =
        transport::TargetWeights::from_counts(&counts[1..], sup.total_weight()).unwrap();

    let t0 = std::time::Instant::now();
    let sol = transport::solve_wcaa(&sup, &model, &targets, 8).unwrap();
    eprintln!(
        "solve: {:?} pivots={} escalations={} arcs={} obj={}",
        t0.elapsed(),
        sol.report.pivots,
        sol.report.escalations,
        sol.report.arcs,
        sol.report.objective
    );
    let gap = (sol.report.objective - sol.report.dual_objective).abs()
        / sol.report.objective.abs().max(1.0);
    eprintln!("gap: {gap}");

    let t0 = std::time::Instant::now();
    let fitted = transport::diagram_from_duals(&model, &sol.duals).unwrap();
    let tie = fitted.default_tie_tol(scan.dims(), scan.spacing());
    let predicted = fitted.rasterize(scan.dims(), scan.spacing(), tie);
    let report = metrics::fit_report(&scan, &predicted).unwrap();
    eprintln!("rasterize+metrics: {:?}", t0.elapsed());
    eprintln!("accuracy: {}", report.accuracy);
    assert!(report.accuracy >= 0.99, "accuracy {}", report.accuracy);
}

#[test]
#[ignore]
fn probe_transport_measured_64() {
    let (scan, _) = synth::synth_scan(20, (64, 64, 64), (1.0, 1.0, 1.0), 42).unwrap();
    let field = stats::compute_boundary_distance(&scan);
    let sup = support::full_support(&scan, &field);
    let st = stats::compute_stats(&scan);
    let model = transport::SiteModel::from_stats(&st);
    let targets = transport::TargetWeights::from_counts(&st.kappa, sup.total_weight()).unwrap();
    let t0 = std::time::Instant::now();
    let sol = transport::solve_wcaa(&sup, &model, &targets, 8).unwrap();
    eprintln!(
        "measured solve: {:?} pivots={} escalations={}",
        t0.elapsed(),
        sol.report.pivots,
        sol.report.escalations
    );
    let fitted = transport::diagram_from_duals(&model, &sol.duals).unwrap();
    let tie = fitted.default_tie_tol(scan.dims(), scan.spacing());
    let predicted = fitted.rasterize(scan.dims(), scan.spacing(), tie);
    let report = metrics::fit_report(&scan, &predicted).unwrap();
    eprintln!("measured accuracy: {}", report.accuracy);
    assert!(report.accuracy >= 0.90, "accuracy {}", report.accuracy);
}

#[test]
#[ignore]
fn probe_dilpm_32() {
    let t0 = std::time::Instant::now();
    let (scan, _truth) = synth::synth_scan(10, (32, 32, 32), (1.0, 1.0, 1.0), 7).unwrap();
    let field = stats::compute_boundary_distance(&scan);
    let sup = support::full_support(&scan, &field);
    let graph = stats::compute_neighbors(&scan);
    eprintln!("prep: {:?} ({} points)", t0.elapsed(), sup.len());

    let t0 = std::time::Instant::now();
    let (diagram, report) = dilpm::fit_dilpm(&sup, &graph, 2, None, 1.0, None).unwrap();
    eprintln!(
        "dilpm: {:?} stage={:?} rounds={} rows={} obj={}",
        t0.elapsed(),
        report.stage,
        report.rounds,
        report.working_rows,
        report.objective
    );
    assert_eq!(report.objective, 0.0);

    let t0 = std::time::Instant::now();
    let tie = diagram.default_tie_tol(scan.dims(), scan.spacing());
    let predicted = diagram.rasterize(scan.dims(), scan.spacing(), tie);
    let fit = metrics::fit_report(&scan, &predicted).unwrap();
    eprintln!("eval: {:?} accuracy={}", t0.elapsed(), fit.accuracy);
    assert!(fit.accuracy >= 0.99, "accuracy {}", fit.accuracy);
    let _ = DiagramParams::k(&diagram);
}
