#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowmil/motion/video.hpp"

namespace flowmil::motion {

enum class AnomalyKind { burst, reversal, scatter };

AnomalyKind anomaly_kind_from_string(const std::string& s);
std::string to_string(AnomalyKind k);

/// Synthetic weakly-labeled video generation. Normal videos carry slow,
/// coherent object drift over a static textured background; anomalous videos
/// embed one or two contiguous intervals of a distinct motion regime.
/// Generation is a pure function of the config (including seed).
struct GeneratorConfig {
    int normal_count = 10;
    int anomalous_count = 10;
    int frames = 64;
    int height = 64;
    int width = 64;
    std::vector<AnomalyKind> kinds{AnomalyKind::burst, AnomalyKind::reversal,
                                   AnomalyKind::scatter};
    std::uint64_t seed = 1;
    std::string id_prefix = "v";

    void validate() const;
};

std::vector<SyntheticVideo> generate_dataset(const GeneratorConfig& cfg);

}  // namespace flowmil::motion
