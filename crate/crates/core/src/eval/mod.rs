//! Metrics, the robot evaluation loop and the object-scaling benchmark.

pub mod bench;
pub mod metrics;
pub mod robot;

pub use bench::{benchmark_object_scaling, BenchReport, BenchRow, BENCH_CSV_HEADER};
pub use metrics::{boundary_f, default_tolerance, jaccard, score_video, select_worst_frame, select_worst_frames, BinaryMask, ObjectScore};
pub use robot::{generate_robot_scribbles, run_robot_session, MetricReport, RoundReport, DEFAULT_MIN_LEN, METRIC_CSV_HEADER};
