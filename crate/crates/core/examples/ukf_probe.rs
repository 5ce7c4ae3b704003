// scratch probe: border-crossing times vs the gps1 outage windows
use terrafusion::config::ScenarioConfig;
use terrafusion::world::drive_waypoints;

fn main() {
    let config = ScenarioConfig::default_study();
    let scenario = config.validate().unwrap();
    let truth = drive_waypoints(&scenario.world, &scenario.script, 0.01).unwrap();
    let mut last = scenario.world.sample_ground(
        truth.states[0].pose.x, truth.states[0].pose.y);
    eprintln!("duration {:.1} s", truth.duration());
    for s in &truth.states {
        let g = scenario.world.sample_ground(s.pose.x, s.pose.y);
        if g != last {
            let phase = s.t.rem_euclid(10.0);
            let in_outage = phase >= 9.0;
            eprintln!("t={:7.2} phase={:4.1} pos=({:6.1},{:6.1}) {:?}->{:?}{}",
                s.t, phase, s.pose.x, s.pose.y, last, g,
                if in_outage { "  <<< in gps1 outage" } else { "" });
            last = g;
        }
    }
}
