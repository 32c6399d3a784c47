pub mod ctu_net;
pub mod nn;
pub mod par;
pub mod train_eval;
pub mod video_data;
