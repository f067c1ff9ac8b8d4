//! File formats: `.cube` LUTs, binary checkpoints, PNG/PPM images and
//! dataset manifests.

pub mod checkpoint;
pub mod cube;
pub mod image_io;
pub mod manifest;

pub use self::checkpoint::{read_checkpoint, write_checkpoint};
pub use self::cube::{read_cube, read_cube_file, write_cube, write_cube_file};
pub use self::image_io::{read_image, write_image, BitDepth};
pub use self::manifest::{load_dataset, read_manifest};
