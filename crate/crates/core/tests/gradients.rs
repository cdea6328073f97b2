#[allow(dead_code)]
#[path = "support/gradcheck.rs"]
mod gradcheck;

#[test]
fn linear_algebra_ops() {
    gradcheck::linear_algebra_ops();
}

#[test]
fn elementwise_ops() {
    gradcheck::elementwise_ops();
}

#[test]
fn structural_ops() {
    gradcheck::structural_ops();
}

#[test]
fn conv_and_pool_ops() {
    gradcheck::conv_and_pool_ops();
}

#[test]
fn loss_ops() {
    gradcheck::loss_ops();
}

#[test]
fn full_encoder_graph() {
    gradcheck::full_encoder_graph();
}

#[test]
fn decoder_concat_fusion() {
    gradcheck::decoder_concat_fusion();
}

#[test]
fn decoder_early_fusion_with_concepts() {
    gradcheck::decoder_early_fusion_with_concepts();
}

#[test]
fn decoder_late_fusion_projected() {
    gradcheck::decoder_late_fusion_projected();
}

#[test]
fn decoder_late_fusion_mean() {
    gradcheck::decoder_late_fusion_mean();
}
