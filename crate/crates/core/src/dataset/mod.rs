//! Ground-truth schema, synthetic corpus generation and compositional splits.

mod annotation;
mod corpus;
mod split;
mod synth;

pub use annotation::{
    load_annotations, save_annotations, AnnotationSet, FrameAnnotation, Triplet, TripletClass,
    VideoAnnotation, ANNOTATION_FORMAT, ANNOTATION_VERSION,
};
pub use corpus::{write_corpus, Corpus, CorpusHeader, CORPUS_FORMAT};
pub use split::{check_split, make_compositional_split, Holdout, SplitConfig, SplitSpec};
pub use synth::{
    generate_synthetic, generate_video, video_id, GenConfig, RelationRules, SyntheticVideo, ABOVE, BELOW,
    CONTAINING, LEFT_OF, MAX_OBJECT_CLASSES, NEAR, OVERLAPPING, RELATION_NAMES, RIGHT_OF,
};
