mod common;

use common::{check_balance, random_gui_action};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use vdesk_core::action::{compile, Action, Point};
use vdesk_core::rfb::InputEvent;

fn masks(events: &[InputEvent]) -> Vec<u8> {
    events
        .iter()
        .map(|e| match e {
            InputEvent::Pointer { mask, .. } => *mask,
            InputEvent::Key { .. } => panic!("key event in pointer action"),
        })
        .collect()
}

#[test]
fn right_click_masks() {
    let ev = compile(&Action::RightClick { point: Point::new(5, 6) }, 64, 64).unwrap();
    assert_eq!(masks(&ev), [0, 4, 0]);
}

#[test]
fn zero_length_drag_is_press_and_release() {
    let p = Point::new(10, 10);
    let ev = compile(&Action::Drag { point: p, end_point: p }, 64, 64).unwrap();
    assert_eq!(ev, [InputEvent::pointer(10, 10, 1), InputEvent::pointer(10, 10, 0)]);
}

#[test]
fn the_oracle_catches_imbalance() {
    assert!(check_balance(&[InputEvent::pointer(0, 0, 1)]).is_err());
    assert!(check_balance(&[InputEvent::key(0x61, false)]).is_err());
    assert!(check_balance(&[InputEvent::key(0x61, true)]).is_err());
    assert!(check_balance(&[InputEvent::key(0x61, true), InputEvent::key(0x61, false)]).is_ok());
}

#[test]
fn thousand_random_actions_balance() {
    let mut rng = StdRng::seed_from_u64(0xba1a);
    for i in 0..1000 {
        let a = random_gui_action(&mut rng, 320, 240);
        let ev = compile(&a, 320, 240).unwrap();
        check_balance(&ev).unwrap_or_else(|e| panic!("#{i} {a:?}: {e}"));
    }
}

proptest! {
    #[test]
    fn every_compiled_action_balances(seed in any::<u64>(), w in 1u16..2000, h in 1u16..2000) {
        let a = random_gui_action(&mut StdRng::seed_from_u64(seed), w, h);
        let ev = compile(&a, w, h).unwrap();
        prop_assert!(check_balance(&ev).is_ok(), "{:?}", a);
        for e in &ev {
            prop_assert!(e.check_bounds(w, h).is_ok());
        }
    }

    #[test]
    fn drag_moves_stay_on_the_segment(x0 in 0i64..500, y0 in 0i64..500, x1 in 0i64..500, y1 in 0i64..500) {
        let a = Action::Drag { point: Point::new(x0, y0), end_point: Point::new(x1, y1) };
        let ev = compile(&a, 500, 500).unwrap();
        let m = masks(&ev);
        prop_assert_eq!(m[0], 1);
        prop_assert_eq!(*m.last().unwrap(), 0);
        prop_assert!(m[1..m.len() - 1].iter().all(|&b| b == 1));
        for e in &ev {
            let InputEvent::Pointer { x, y, .. } = *e else { unreachable!() };
            prop_assert!((x as i64) >= x0.min(x1) && (x as i64) <= x0.max(x1));
            prop_assert!((y as i64) >= y0.min(y1) && (y as i64) <= y0.max(y1));
        }
    }
}
