#ifndef MTLAM_RESOURCES_HPP_
#define MTLAM_RESOURCES_HPP_

#include <chrono>
#include <cstdint>
#include <fstream>
#include <string>

#include <sys/resource.h>

namespace mtlam {

/// Peak resident set size of this process in bytes (VmHWM). Falls back to
/// getrusage when /proc is unavailable.
inline std::uint64_t peak_resident_bytes() {
  std::ifstream status("/proc/self/status");
  std::string key;
  while (status >> key) {
    if (key == "VmHWM:") {
      std::uint64_t kb = 0;
      status >> kb;
      return kb * 1024;
    }
    status.ignore(1 << 12, '\n');
  }
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<std::uint64_t>(usage.ru_maxrss) * 1024;
}

/// Resets the peak RSS watermark so the next reading covers only what follows.
/// Returns false when the kernel does not allow it.
inline bool reset_peak_resident() {
  std::ofstream clear("/proc/self/clear_refs");
  if (!clear) return false;
  clear << "5";
  return static_cast<bool>(clear.flush());
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace mtlam

#endif  // MTLAM_RESOURCES_HPP_
