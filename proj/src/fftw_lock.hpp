#pragma once

#include <mutex>

namespace lrc::detail {

/// FFTW planning is not thread safe; every plan create/destroy takes this lock.
std::mutex& fftw_planner_mutex();

}  // namespace lrc::detail
