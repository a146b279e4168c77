use comixify_core::composer::{compose, Layout, PanelBox};
use comixify_core::{Error, Frame};
use image::Rgb;
use proptest::prelude::*;

fn panels(n: usize, w: u32, h: u32) -> Vec<Frame> {
    (0..n).map(|i| Frame::filled(w, h, [i as f32 / n as f32, 0.5, 1.0 - i as f32 / n as f32])).collect()
}

#[test]
fn grid_examples() {
    let l = Layout::default();
    let pages = compose(&panels(8, 160, 120), &l).unwrap();
    assert_eq!(pages.len(), 1);
    let b = &pages[0].panel_boxes;
    assert_eq!(b.len(), 8);
    let xs: std::collections::BTreeSet<u32> = b.iter().map(|p| p.x).collect();
    let ys: std::collections::BTreeSet<u32> = b.iter().map(|p| p.y).collect();
    assert_eq!((ys.len(), xs.len()), (4, 2));
    assert_eq!(pages[0].image.width(), 1600);

    let pages = compose(&panels(9, 160, 120), &l).unwrap();
    assert_eq!(pages.iter().map(|p| p.panel_boxes.len()).collect::<Vec<_>>(), vec![8, 1]);
    assert_eq!(pages[1].page_index, 1);

    let pages = compose(&panels(1, 50, 50), &l).unwrap();
    assert_eq!(pages.len(), 1);
    assert_eq!(pages[0].panel_boxes.len(), 1);
    assert!(matches!(compose(&[], &l), Err(Error::EmptyInput(_))));
}

#[test]
fn borders_gutters_and_letterbox() {
    let l = Layout::default();
    let mut ps = panels(2, 160, 120);
    // a tall panel in a wide cell gets side bars
    ps[1] = Frame::filled(40, 120, [1.0, 0.0, 0.0]);
    let page = &compose(&ps, &l).unwrap()[0];
    let img = &page.image;
    assert_eq!(*img.get_pixel(0, 0), Rgb([255, 255, 255]));
    let b = page.panel_boxes[1];
    for t in 0..3 {
        assert_eq!(*img.get_pixel(b.x + t, b.y + b.h / 2), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(b.x + b.w / 2, b.y + b.h - 1 - t), Rgb([0, 0, 0]));
    }
    assert_eq!(*img.get_pixel(b.x + 10, b.y + b.h / 2), Rgb([0, 0, 0]));
    assert_eq!(*img.get_pixel(b.x + b.w / 2, b.y + b.h / 2), Rgb([255, 0, 0]));
    // a panel with the cell's aspect fills it edge to edge inside the border
    let a = page.panel_boxes[0];
    assert_ne!(*img.get_pixel(a.x + 3, a.y + 3), Rgb([0, 0, 0]));
    assert_eq!(a.x, l.gutter_px);
    assert_eq!(b.x - (a.x + a.w), l.gutter_px);
    assert_eq!(img.width() - (b.x + b.w), l.gutter_px);
}

#[test]
fn rendering_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ps = panels(5, 90, 60);
    let a = compose(&ps, &Layout::default()).unwrap();
    let b = compose(&ps, &Layout::default()).unwrap();
    a[0].save_png(&dir.path().join("a.png")).unwrap();
    b[0].save_png(&dir.path().join("b.png")).unwrap();
    let ra = std::fs::read(dir.path().join("a.png")).unwrap();
    assert_eq!(ra, std::fs::read(dir.path().join("b.png")).unwrap());
    assert_eq!(&ra[1..4], b"PNG");
}

#[test]
fn degenerate_layouts_are_rejected() {
    let l = Layout { columns: 0, ..Layout::default() };
    assert!(matches!(compose(&panels(1, 4, 4), &l), Err(Error::Constraint(_))));
    let l = Layout { page_width: 20, ..Layout::default() };
    assert!(matches!(compose(&panels(1, 4, 4), &l), Err(Error::Constraint(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn boxes_partition_the_panels(
        n in 1usize..20, columns in 1u32..4, per_page in 1usize..9,
        gutter in 0u32..20, w in 8u32..64, h in 8u32..64,
    ) {
        let l = Layout { page_width: 400, columns, gutter_px: gutter, page_panels: per_page, border_px: 3 };
        let pages = compose(&panels(n, w, h), &l).unwrap();
        prop_assert_eq!(pages.iter().map(|p| p.panel_boxes.len()).sum::<usize>(), n);
        prop_assert_eq!(pages.len(), n.div_ceil(per_page));
        for p in &pages {
            let bs: &[PanelBox] = &p.panel_boxes;
            for (i, a) in bs.iter().enumerate() {
                prop_assert!(a.x + a.w <= p.image.width() && a.y + a.h <= p.image.height());
                for c in &bs[i + 1..] {
                    prop_assert!(!a.intersects(c));
                }
            }
        }
    }
}
