//! Reference OSC encoder and TUIO stream strategies.

use proptest::prelude::*;
use surface_sync_core::tuio::*;

/// Test-only OSC 1.0 encoder, written from the byte layout rather than the
/// decoder: big-endian 32-bit numbers, NUL-terminated strings padded to a
/// multiple of four, `#bundle` + 8-byte time tag + size-prefixed elements.
pub mod reference {
    pub enum Arg<'a> {
        I(i32),
        F(f32),
        S(&'a str),
    }

    fn pad_str(out: &mut Vec<u8>, s: &str) {
        out.extend_from_slice(s.as_bytes());
        out.push(0);
        while out.len() % 4 != 0 {
            out.push(0);
        }
    }

    pub fn message(address: &str, args: &[Arg]) -> Vec<u8> {
        let mut out = Vec::new();
        pad_str(&mut out, address);
        let tags: String = std::iter::once(',')
            .chain(args.iter().map(|a| match a {
                Arg::I(_) => 'i',
                Arg::F(_) => 'f',
                Arg::S(_) => 's',
            }))
            .collect();
        pad_str(&mut out, &tags);
        for a in args {
            match a {
                Arg::I(v) => out.extend_from_slice(&v.to_be_bytes()),
                Arg::F(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
                Arg::S(s) => pad_str(&mut out, s),
            }
        }
        out
    }

    pub fn bundle(messages: &[Vec<u8>]) -> Vec<u8> {
        let mut out = b"#bundle\0".to_vec();
        out.extend_from_slice(&1u64.to_be_bytes());
        for m in messages {
            out.extend_from_slice(&(m.len() as i32).to_be_bytes());
            out.extend_from_slice(m);
        }
        out
    }
}

use reference::Arg::{F, I, S};

pub fn encode_frame(f: &TuioFrame) -> Vec<u8> {
    let addr = f.profile.address();
    let mut msgs = Vec::new();
    if let Some(src) = &f.source {
        msgs.push(reference::message(addr, &[S("source"), S(src)]));
    }
    let mut alive = vec![S("alive")];
    alive.extend(f.alive.iter().map(|&i| I(i)));
    msgs.push(reference::message(addr, &alive));
    for e in &f.set_events {
        let args = match e.obj {
            None => vec![S("set"), I(e.session_id), F(e.x), F(e.y), F(e.vx), F(e.vy), F(e.accel)],
            Some(o) => vec![
                S("set"),
                I(e.session_id),
                I(o.class_id),
                F(e.x),
                F(e.y),
                F(o.angle),
                F(e.vx),
                F(e.vy),
                F(o.rot_vel),
                F(e.accel),
                F(o.rot_accel),
            ],
        };
        msgs.push(reference::message(addr, &args));
    }
    msgs.push(reference::message(addr, &[S("fseq"), I(f.fseq)]));
    reference::bundle(&msgs)
}

pub fn cur_frame(alive: &[i32], sets: &[(i32, f32, f32)], fseq: i32) -> TuioFrame {
    TuioFrame {
        profile: Profile::Cur2D,
        source: None,
        alive: alive.to_vec(),
        set_events: sets
            .iter()
            .map(|&(s, x, y)| SetEvent { session_id: s, x, y, vx: 0.0, vy: 0.0, accel: 0.0, obj: None })
            .collect(),
        fseq,
    }
}

pub fn unit() -> impl Strategy<Value = f32> {
    prop_oneof![0.0f32..=1.0, Just(0.0), Just(1.0)]
}

pub fn finite() -> impl Strategy<Value = f32> {
    any::<f32>().prop_filter("finite", |x| x.is_finite())
}

pub fn arb_frame() -> impl Strategy<Value = TuioFrame> {
    (
        any::<bool>(),
        prop::option::of("[a-z0-9@.:]{1,20}"),
        prop::collection::btree_set(-5i32..1000, 0..6),
        any::<i32>(),
        prop::collection::vec((unit(), unit(), finite(), finite(), finite(), any::<i32>(), finite(), finite(), finite()), 6),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(obj, source, alive, fseq, params, k)| {
            let alive: Vec<i32> = alive.into_iter().collect();
            let n = if alive.is_empty() { 0 } else { k.index(alive.len() + 1) };
            let set_events = alive
                .iter()
                .take(n)
                .zip(params)
                .map(|(&id, (x, y, vx, vy, accel, class_id, angle, rv, ra))| SetEvent {
                    session_id: id,
                    x,
                    y,
                    vx,
                    vy,
                    accel,
                    obj: obj.then_some(ObjFields { class_id, angle, rot_vel: rv, rot_accel: ra }),
                })
                .collect();
            TuioFrame {
                profile: if obj { Profile::Obj2D } else { Profile::Cur2D },
                source,
                alive,
                set_events,
                fseq,
            }
        })
}

/// Random cursor streams: each step keeps, drops or introduces ids (ids
/// are never reused, as TUIO session ids are unique) and moves some.
pub fn arb_stream() -> impl Strategy<Value = Vec<(Vec<i32>, Vec<(i32, f32, f32)>, i32)>> {
    prop::collection::vec(
        (prop::collection::vec(any::<bool>(), 8), prop::collection::vec((any::<bool>(), unit(), unit()), 8), 0u8..3, -1i32..3),
        1..40,
    )
    .prop_map(|steps| {
        let mut next_id = 1;
        let mut alive: Vec<i32> = Vec::new();
        let mut fseq = 0;
        let mut out = Vec::new();
        for (keep, moves, births, jump) in steps {
            alive = alive.iter().zip(keep.iter().cycle()).filter(|(_, k)| **k).map(|(i, _)| *i).collect();
            for _ in 0..births {
                alive.push(next_id);
                next_id += 1;
            }
            let sets = alive
                .iter()
                .zip(moves.iter().cycle())
                .filter(|(_, m)| m.0)
                .map(|(id, m)| (*id, m.1, m.2))
                .collect();
            // Mostly increasing, sometimes stale, sometimes out-of-band.
            let f = match jump {
                -1 => -1,
                0 => fseq,
                _ => {
                    fseq += jump;
                    fseq
                }
            };
            out.push((alive.clone(), sets, f));
        }
        out
    })
}
