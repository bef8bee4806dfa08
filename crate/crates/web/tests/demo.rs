use inspekt_web::{attention_counts, attention_overlay, measure_crack, to_rgba, ThresholdDemo};

#[test]
fn threshold_steering_reveals_second_spall() {
    let mut demo = ThresholdDemo::create().unwrap();
    assert_eq!(demo.visible_at(0.5).unwrap().len(), 1);
    let two = demo.visible_at(0.2).unwrap();
    assert_eq!(two.len(), 2);
    assert!(two.iter().all(|b| b.class == "spalling"));
    assert!(demo.visible_at(1.5).is_err());
    assert_eq!(demo.visible_at(0.5).unwrap().len(), 1);
}

#[test]
fn guided_mask_stays_in_box() {
    let c = attention_counts(0.5).unwrap();
    assert!(c.outside_whole > 0);
    assert_eq!(c.outside_guided, 0);
    assert!(c.inside_guided > 0);
    let overlay = attention_overlay(0.5, true).unwrap();
    assert_eq!(overlay.len(), 120 * 120 * 4);
    let red = overlay.chunks(4).filter(|p| p[..3] == [230, 40, 40]).count();
    assert_eq!(red, c.inside_guided);
}

#[test]
fn crack_demo_recovers_width() {
    let r = measure_crack(16, 0.1).unwrap();
    assert!((r.width_mm - r.true_width_mm).abs() <= 0.1, "{r:?}");
    assert_eq!(r.band, "Narrow - Moderate");
    assert!(measure_crack(0, 0.1).is_err());
    assert!(measure_crack(10, -1.0).is_err());
}

#[test]
fn rgba_layout() {
    let img = inspekt_core::types::ImageBuffer::new(2, 1, 1, vec![7, 9]).unwrap();
    assert_eq!(to_rgba(&img), vec![7, 7, 7, 255, 9, 9, 9, 255]);
}
