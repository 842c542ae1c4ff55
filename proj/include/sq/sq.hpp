#pragma once

#include "sq/baselines.hpp"
#include "sq/diagnostics.hpp"
#include "sq/errors.hpp"
#include "sq/generators.hpp"
#include "sq/instance_io.hpp"
#include "sq/linalg.hpp"
#include "sq/mdp.hpp"
#include "sq/qfunc.hpp"
#include "sq/record_io.hpp"
#include "sq/rng.hpp"
#include "sq/s3q.hpp"
#include "sq/s4q.hpp"
#include "sq/streamls.hpp"
