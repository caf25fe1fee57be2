use anyhow::Result;
use flexdet::data::{generate_dataset, write_dataset, DatasetSpec};

use crate::manifest::RunManifest;
use crate::{Context, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, default_value_t = 500)]
    pub num_images: usize,
    /// Side of the square images in pixels.
    #[arg(long, default_value_t = 96)]
    pub image_size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 3)]
    pub max_objects: usize,
}

pub fn run(ctx: &Context, args: Args) -> Result<Outcome> {
    let spec = DatasetSpec {
        objects_per_image: (args.min_objects, args.max_objects),
        ..DatasetSpec::new(args.num_images, args.image_size, ctx.seed)
    };
    let ds = generate_dataset(&spec)?;
    write_dataset(&ds, &ctx.out_dir)?;
    let mut m = RunManifest::new(ctx, "datagen", &spec)?;
    m.output(&ctx.out_dir, &ctx.out_dir.join("annotations.json"))?;
    m.output(&ctx.out_dir, &ctx.out_dir.join("images"))?;
    m.write(&ctx.out_dir)?;
    let objects: usize = ds.images.iter().map(|r| r.objects.len()).sum();
    println!(
        "wrote {} images with {objects} objects to {}",
        ds.len(),
        ctx.out_dir.display()
    );
    Ok(Outcome::Complete)
}
