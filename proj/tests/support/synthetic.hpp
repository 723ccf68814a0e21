#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lanhar/types.hpp"

namespace lanhar::synth {

// Per-activity signal recipe. Ranges are peak-to-peak so they land squarely
// inside the descriptive bands a template backend keys on (movement regime,
// rhythm, gyroscope level, posture); every margin survives the jitter and the
// mild inter-dataset scaling below.
struct ActivityProfile {
  std::string label;
  double freq_hz = 1.0;       // dominant accelerometer frequency
  double accel_range = 1.0;   // peak-to-peak on the mover channel (ax)
  double gyro_range = 0.5;    // peak-to-peak on the strongest gyro channel
  double az_base = 9.81;      // gravity offset (vertical posture)
  bool gravity_on_ax = false; // horizontal posture: gravity on ax instead
};

const std::vector<ActivityProfile>& canonical_profiles();
const ActivityProfile& profile_of(const std::string& label);

struct CorpusSpec {
  std::string dataset_id;
  std::vector<std::string> labels;
  int subjects = 2;
  double seconds_per_activity = 30.0;  // per subject
  double rate_hz = 20.0;
  double ax_bias = 0.0;    // planted mean shift; invisible to amplitude bands
  double amp_scale = 1.0;  // heterogeneity; keep within [0.93, 1.07]
  uint64_t seed = 0;
};

// One stream per (subject, activity), timestamps continuous per subject.
std::vector<SensorStream> generate_streams(const CorpusSpec& spec);

// Writes the corpus as a canonical CSV recording file.
void write_csv(const std::filesystem::path& path, const CorpusSpec& spec);

// Windows cut directly from the generated streams (no file round trip).
std::vector<IMUWindow> generate_windows(const CorpusSpec& spec, int window_len, int stride);

}  // namespace lanhar::synth
