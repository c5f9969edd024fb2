#pragma once

/// Umbrella header: the whole library except the HTTP backend (remote.hpp),
/// which is opt-in because it pulls in a full HTTP client.

#include "backend.hpp"
#include "collapse.hpp"
#include "config.hpp"
#include "core.hpp"
#include "fixture.hpp"
#include "infotheory.hpp"
#include "report.hpp"
#include "selection.hpp"
#include "sha256.hpp"
