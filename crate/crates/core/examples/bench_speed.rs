use std::time::Instant;
use triggerbench::nn::{self, Batch, ModelSpec};
use triggerbench::rng::CounterRng;

fn main() {
    let spec = ModelSpec::desk_cnn(10, 1);
    let w = nn::init(&spec).unwrap();
    let mut rng = CounterRng::new(0, 0);
    let n = 64;
    let images: Vec<f32> = (0..n * 3 * 32 * 32).map(|_| rng.next_f32()).collect();
    let labels: Vec<u16> = (0..n).map(|_| rng.below(10) as u16).collect();
    let batch = Batch::new(images, (3, 32, 32), labels).unwrap();

    // warmup
    let _ = nn::loss_and_grad(&w, &spec, &batch).unwrap();

    let t = Instant::now();
    let iters = 50;
    for _ in 0..iters {
        let _ = nn::loss_and_grad(&w, &spec, &batch).unwrap();
    }
    let dt = t.elapsed().as_secs_f64();
    let imgs = (iters * n) as f64;
    println!("loss_and_grad: {:.1} images/s ({:.2} ms/batch of {})", imgs / dt, dt / iters as f64 * 1e3, n);

    let t = Instant::now();
    for _ in 0..iters {
        let _ = nn::forward(&w, &spec, &batch).unwrap();
    }
    let dt = t.elapsed().as_secs_f64();
    println!("forward:       {:.1} images/s", imgs / dt);
}
