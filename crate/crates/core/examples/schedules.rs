// Learning-rate and weight-decay schedules of the preset step plans.

use fusionbench::recipe::{lr_at, wd_at, ScheduleSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["heico-step2", "inhouse-step2", "steps34"] {
        let spec = ScheduleSpec::preset(name).expect("preset");
        let n = spec.total_steps(32);
        let w = spec.warmup_steps(n);
        println!("{name}: {n} steps, warmup {w}");
        for i in [0, w / 2, w, n / 2, n - 1] {
            println!("  step {i:>6}  lr {:.4e}  wd {:.4e}", lr_at(i, n, &spec)?, wd_at(i, n, &spec)?);
        }
    }
    let pre = ScheduleSpec::heico_step2();
    let ft = ScheduleSpec::finetune_from(&pre);
    println!("finetune from heico-step2: lr_max {:e}, wd_start {:e}", ft.lr_max, ft.wd_start);
    Ok(())
}
