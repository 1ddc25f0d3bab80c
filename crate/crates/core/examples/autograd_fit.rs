//! Fits a single 3×3 convolution plus sigmoid to an edge-mask target with
//! the tape and Adam, minimizing the Jaccard distance.
//!
//! `cargo run --release --example autograd_fit`

use hcdnn::autograd::{AdamState, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hcdnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, h, w) = (4, 16, 16);
    // Random vertical bars; the target marks pixels brighter than their left neighbour.
    let mut x = vec![0.0f32; n * h * w];
    let mut t = vec![0.0f32; n * h * w];
    for b in 0..n {
        let cols: Vec<f32> = (0..w).map(|_| rng.random_range(0.0..1.0)).collect();
        for r in 0..h {
            for c in 0..w {
                let i = (b * h + r) * w + c;
                x[i] = cols[c];
                t[i] = (c > 0 && cols[c] > cols[c - 1] + 0.2) as u8 as f32;
            }
        }
    }
    let input = Tensor::new(&[n, 1, h, w], x)?;
    let target = Tensor::new(&[n, 1, h, w], t)?;

    let mut kernel = Tensor::new(&[1, 1, 3, 3], (0..9).map(|_| rng.random_range(-0.3..0.3)).collect())?;
    let mut bias = Tensor::zeros(&[1]);
    let mut adam = AdamState::new([9, 1]).with_learning_rate(0.05);
    for step in 0..=300 {
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(input.clone()), tape.leaf(kernel.clone()), tape.leaf(bias.clone()));
        let z = tape.conv2d(xv, kv, bv, 1)?;
        let p = tape.sigmoid(z)?;
        let loss = tape.jaccard_loss(p, &target)?;
        tape.backward(loss)?;
        if step % 50 == 0 {
            println!("step {step:3}: jaccard distance {:.4}", tape.value(loss).data()[0]);
        }
        let (gk, gb) = (tape.grad(kv).unwrap().to_vec(), tape.grad(bv).unwrap().to_vec());
        adam.step(&mut [&mut kernel, &mut bias], &[&gk, &gb])?;
    }
    println!("learned kernel {:?}, bias {:.3}", kernel.data(), bias.data()[0]);
    Ok(())
}
