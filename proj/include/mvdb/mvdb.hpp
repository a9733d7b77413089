#pragma once

#include "mvdb/primitives.hpp"
#include "mvdb/program.hpp"
#include "mvdb/machine.hpp"
#include "mvdb/environment.hpp"
#include "mvdb/live_run.hpp"
#include "mvdb/config_codec.hpp"
#include "mvdb/debugger.hpp"
#include "mvdb/multiverse.hpp"
#include "mvdb/session.hpp"
#include "mvdb/text_format.hpp"
#include "mvdb/wire.hpp"
#include "mvdb/bench.hpp"
