mod common;

use std::io::Cursor;

use common::{random_trajectory, rng};
use mtp_anomaly::trajectory::{
    confidence_weights, parse_jsonl, windows, write_jsonl_to, Keypoint, PoseFrame, PoseTrajectory, NUM_JOINTS,
};
use proptest::prelude::*;

fn pixel_trajectory(seed: u64, len: usize) -> PoseTrajectory {
    let mut t = random_trajectory(&mut rng(seed), "cam", "7", 40, len);
    t.frame_dims = (640, 480);
    for f in &mut t.frames {
        for k in &mut f.keypoints {
            k.x *= 640.0;
            k.y *= 480.0;
        }
    }
    t
}

proptest! {
    #[test]
    fn stride_one_window_count(len in 1usize..=100, l_in in 1usize..10, l_out in 1usize..10) {
        let t = random_trajectory(&mut rng(len as u64), "v", "p", 0, len);
        let w = windows(&t, l_in, l_out, 1);
        prop_assert_eq!(w.len(), (len + 1).saturating_sub(l_in + l_out));
        for (k, win) in w.iter().enumerate() {
            prop_assert_eq!(win.offset, k);
            prop_assert_eq!(win.frames(), t.frames[k..k + l_in + l_out].to_vec());
        }
    }

    #[test]
    fn weights_form_a_distribution(cs in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..=1.0], NUM_JOINTS)) {
        let kps: [Keypoint; NUM_JOINTS] = std::array::from_fn(|k| Keypoint::new(1.0, 2.0, cs[k]));
        let w = confidence_weights(&PoseFrame::new(0, kps));
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn jsonl_roundtrip_is_idempotent(seed in 0u64..500, len in 1usize..12) {
        let t = pixel_trajectory(seed, len);
        let mut buf = Vec::new();
        write_jsonl_to(&[t.clone()], &mut buf).unwrap();
        let once = parse_jsonl(Cursor::new(&buf)).unwrap();
        let mut again = Vec::new();
        write_jsonl_to(&once.trajectories, &mut again).unwrap();
        prop_assert_eq!(&buf, &again);
        prop_assert_eq!(once.trajectories, vec![t]);
    }

    #[test]
    fn normalization_roundtrip(seed in 0u64..500, len in 1usize..20) {
        let t = pixel_trajectory(seed, len);
        let back = t.normalize().unwrap().denormalize().unwrap();
        for (a, b) in t.frames.iter().zip(&back.frames) {
            for (p, q) in a.keypoints.iter().zip(&b.keypoints) {
                prop_assert!((p.x - q.x).abs() <= 1e-12 && (p.y - q.y).abs() <= 1e-12);
                prop_assert_eq!(p.c, q.c);
            }
        }
    }

    #[test]
    fn reversal_is_an_involution(seed in 0u64..500, len in 1usize..30) {
        let t = pixel_trajectory(seed, len);
        let r = t.reversed();
        prop_assert_eq!(r.reversed(), t.clone());
        prop_assert_eq!(r.first_frame(), t.first_frame());
        r.validate().unwrap();
    }
}

#[test]
fn loaded_trajectories_are_contiguous() {
    // Two tracks, one with a gap: the gap splits it into two trajectories.
    let mut lines = String::new();
    for (track, frames) in [("a", vec![0, 1, 2, 3]), ("b", vec![5, 6, 9, 10, 11])] {
        for f in frames {
            let kps: Vec<String> = (0..NUM_JOINTS).map(|_| "[1.0,2.0,0.5]".to_string()).collect();
            lines += &format!(
                "{{\"video_id\":\"v\",\"track_id\":\"{track}\",\"frame\":{f},\"width\":10,\"height\":10,\"keypoints\":[{}]}}\n",
                kps.join(",")
            );
        }
    }
    let ds = parse_jsonl(Cursor::new(lines)).unwrap();
    assert_eq!(ds.len(), 3);
    for t in &ds.trajectories {
        for pair in t.frames.windows(2) {
            assert_eq!(pair[1].frame_index - pair[0].frame_index, 1);
        }
    }
}
