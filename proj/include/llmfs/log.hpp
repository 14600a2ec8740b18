#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace llmfs {

using WarningSink = std::function<void(std::string_view)>;

/// Emits a warning through the installed sink (stderr by default).
void warn(std::string_view message);

/// Replaces the warning sink; returns the previous one. Passing an empty
/// function restores the stderr sink.
WarningSink set_warning_sink(WarningSink sink);

/// Silences or re-enables the default stderr sink.
void set_quiet(bool quiet);

}  // namespace llmfs
