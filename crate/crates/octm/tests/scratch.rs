#[test]
fn scratch_backward_one() {
    use octm::adequacy::{check_backward, SimConfig};
    use octm::tccsm::parse_tccs;
    let cfg = SimConfig::default();
    let name = std::env::var("ITEM").unwrap_or_else(|_| "choice".into());
    let src = octm::examples::find(&name).unwrap().source.to_string();
    let p = parse_tccs(&src).unwrap();
    let t0 = std::time::Instant::now();
    let b = check_backward(&p, &cfg).unwrap();
    println!("{name} backward pass={} inconc={} steps={} in {:?}",
        b.passed, b.inconclusive, b.reports.len(), t0.elapsed());
    for r in b.reports.iter().filter(|r| !matches!(r.status, octm::adequacy::EdgeStatus::Matched{..})).take(6) {
        println!("   {} : {} : {:?}", r.source, r.reduction, r.status);
    }
}
