#ifndef MEA_WAV_HPP
#define MEA_WAV_HPP

#include <filesystem>
#include <vector>

namespace mea::wav {

// 16-bit PCM mono WAV, little-endian. Samples are doubles on the 16-bit
// grid k/32767; writing rounds to that grid, so write/read round-trips
// exactly for grid-valued input.
void write_mono16(const std::filesystem::path& path,
                  const std::vector<double>& samples, int sample_rate);

std::vector<double> read_mono16(const std::filesystem::path& path, int* sample_rate);

}  // namespace mea::wav

#endif
