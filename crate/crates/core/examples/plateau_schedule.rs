//! Learning-rate halving on validation plateaus, fed with a scripted loss
//! curve.
//!
//! ```text
//! cargo run --example plateau_schedule
//! ```

use memlab::optim::{PlateauState, DEFAULT_LR};

fn main() {
    let losses = [
        5.0, 4.0, 3.5, 3.5, 3.6, 3.7, 3.4, 3.4, 3.4, 3.4, 3.4, 3.4, 3.4, 2.0, 1.9,
    ];
    let mut plateau = PlateauState::default();
    let mut lr = DEFAULT_LR;
    println!("epoch  val_loss  lr_used   best    stale  next_lr");
    for (i, &loss) in losses.iter().enumerate() {
        let used = lr;
        lr = plateau.update(loss, lr);
        println!(
            "{:>5}  {:>8.2}  {:.2e}  {:>5.2}  {:>5}  {:.2e}{}",
            i + 1,
            loss,
            used,
            plateau.best_val_loss.unwrap(),
            plateau.epochs_since_improvement,
            lr,
            if lr < used { "  halved" } else { "" }
        );
    }
    println!("{} halvings", plateau.halvings);
}
