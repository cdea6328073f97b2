#[path = "support/metric_cases.rs"]
mod metric_cases;

#[test]
fn hand_worked_examples_hold() {
    let failed: Vec<String> = metric_cases::cases()
        .iter()
        .filter(|c| !c.holds())
        .map(|c| format!("{}: got {} want {}", c.name, c.got, c.want))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn rounded_values_match_the_worked_decimals() {
    let by_name = |n: &str| metric_cases::cases().into_iter().find(|c| c.name == n).unwrap().got;
    assert!((by_name("rouge-l skipped token") - 0.8571).abs() < 1e-4);
    assert!((by_name("meteor truncated hypothesis") - 0.7550).abs() < 1e-4);
}
