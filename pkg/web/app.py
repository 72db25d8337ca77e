"""Flask JSON service for TubeMAV simulations"""

import logging
import os
from pathlib import Path
from functools import wraps
from datetime import datetime, timedelta
from typing import Dict, Tuple

from flask import Flask, request, jsonify
from werkzeug.utils import secure_filename

# Import our modules
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from src.cascade import FlightSetup, build_setup
from src.exceptions import TubeMavError
from src.harness import make_controller, run_closed_loop
from src.lin_model import state_names
from src.rtmpc import spectral_radius
from src.trajectories import TASKS, DisturbanceSpec, task_by_name

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Flask app configuration
from config import config_by_name

app = Flask(__name__)
settings = config_by_name.get(os.getenv('APP_CONFIG', 'production'), config_by_name['production'])
app.config['SETTINGS'] = settings
app.config['MAX_CONTENT_LENGTH'] = settings.MAX_CONTENT_LENGTH
app.config['JSON_SORT_KEYS'] = False

# Designed controllers, keyed by config overrides
MAX_CACHED_SETUPS = 4
setup_cache: Dict[Tuple, FlightSetup] = {}

# Settings a client may override; paths and training budgets stay server-side
WEB_OVERRIDE_KEYS = frozenset({
    'FEXT_FRAC', 'MAX_TILT_DEG', 'DFCMD_FRAC', 'MAX_RATE_CMD', 'MAX_VEL', 'MAX_POS',
    'EULER_RATE_MATRIX', 'Q_POS', 'Q_VEL', 'Q_ATT', 'Q_CMD', 'R_RATE', 'R_THRUST',
    'N', 'TUBE_ROLLOUTS', 'TUBE_HORIZON', 'TUBE_SEED', 'TUBE_SAMPLING',
})
WEB_BUDGET_LIMITS = {'N': 100, 'TUBE_ROLLOUTS': 1000, 'TUBE_HORIZON': 500}

# Rate limiting tracker (in-memory, simple implementation)
request_timestamps = {}

def rate_limit(max_requests=20, window_seconds=3600):
    """Simple rate limiter decorator"""
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            client_ip = request.remote_addr
            now = datetime.now()

            # Clean up old entries
            if client_ip in request_timestamps:
                request_timestamps[client_ip] = [
                    ts for ts in request_timestamps[client_ip]
                    if now - ts < timedelta(seconds=window_seconds)
                ]
            else:
                request_timestamps[client_ip] = []

            # Check rate limit
            if len(request_timestamps[client_ip]) >= max_requests:
                logger.warning(f"Rate limit exceeded for IP: {client_ip}")
                return jsonify({'error': 'リクエストが多すぎます。しばらく待ってからお試しください。'}), 429

            request_timestamps[client_ip].append(now)
            return f(*args, **kwargs)
        return decorated_function
    return decorator


def get_setup(overrides: dict) -> FlightSetup:
    """Design (or reuse) the controller stack for a set of config overrides"""
    if not isinstance(overrides, dict):
        raise ValueError('overrides must be an object')
    key = tuple(sorted((str(k).strip().upper(), str(v)) for k, v in overrides.items()))
    rejected = sorted(name for name, _ in key if name not in WEB_OVERRIDE_KEYS)
    if rejected:
        raise ValueError(f"Overrides not allowed: {', '.join(rejected)}")
    if key not in setup_cache:
        cfg = app.config['SETTINGS'].apply(overrides)
        for name, limit in WEB_BUDGET_LIMITS.items():
            value = getattr(cfg, name)
            if not 1 <= value <= limit:
                raise ValueError(f"{name} must be between 1 and {limit}, got {value}")
        if len(setup_cache) >= MAX_CACHED_SETUPS:
            setup_cache.pop(next(iter(setup_cache)))
        logger.info(f"Designing controller stack for overrides {dict(key)}")
        setup_cache[key] = build_setup(cfg)
    return setup_cache[key]


def resolve_weights(name: str) -> Path:
    """Weights are only read from the configured output folder"""
    filename = secure_filename(name or '')
    if not filename:
        raise ValueError('weights name is invalid')
    return Path(app.config['SETTINGS'].get_output_folder()) / filename


def error_response(e: Exception):
    if isinstance(e, FileNotFoundError):
        return jsonify({'error': 'ファイルが見つかりません', 'detail': str(e)}), 404
    if isinstance(e, ValueError):
        return jsonify({'error': 'パラメータが無効です', 'detail': str(e)}), 400
    if isinstance(e, TubeMavError):
        return jsonify({'error': 'シミュレーションに失敗しました', 'detail': str(e), 'type': type(e).__name__}), 422
    logger.error(f"Unexpected error: {e}", exc_info=True)
    return jsonify({'error': 'サーバーエラーが発生しました。管理者に連絡してください。'}), 500


@app.route('/api/tasks')
def list_tasks():
    """Available flight tasks"""
    return jsonify({
        'tasks': [
            {'name': name, 'kind': task.kind, 'duration': task.duration, 'disturbance': task.disturbance.kind}
            for name, task in TASKS.items()
        ]
    })


@app.route('/api/tube', methods=['POST'])
@rate_limit(max_requests=20, window_seconds=3600)
def tube_bounds():
    """Tube cross-section and tightened input box for the given overrides"""
    try:
        body = request.get_json(silent=True) or {}
        setup = get_setup(body.get('overrides', {}))
        tube = setup.tube
        return jsonify({
            'tube': {name: [float(lo), float(hi)] for name, lo, hi in zip(state_names(tube.Z.dim), tube.Z.lo, tube.Z.hi)},
            'u_tight': {'lo': tube.U_tight.lo.tolist(), 'hi': tube.U_tight.hi.tolist()},
            'closed_loop_spectral_radius': spectral_radius(setup.model.A + setup.model.B @ tube.K),
        })
    except Exception as e:
        return error_response(e)


@app.route('/api/simulate', methods=['POST'])
@rate_limit(max_requests=20, window_seconds=3600)
def simulate():
    """Fly one task and return the tracking metrics"""
    try:
        body = request.get_json(silent=True) or {}
        task = task_by_name(str(body.get('task', 't1')))
        controller_kind = str(body.get('controller', 'rtmpc'))
        seed = int(body.get('seed', 0))
        fext_frac = float(body.get('fext_frac', 0.0))
        setup = get_setup(body.get('overrides', {}))

        weights = resolve_weights(body.get('weights', '')) if controller_kind == 'policy' else None
        controller = make_controller(controller_kind, setup, weights)
        disturbance = DisturbanceSpec.sustained(fext_frac) if fext_frac > 0 else None
        cfg = app.config['SETTINGS']
        log, metrics = run_closed_loop(setup, controller, task, seed, disturbance,
                                       gyro_noise_std=cfg.GYRO_NOISE_STD, t0=cfg.T0)
        logger.info(f"Simulated {task.kind} with {controller_kind} (seed {seed})")
        return jsonify({
            'task': task.kind,
            'controller': controller_kind,
            'seed': seed,
            'metrics': metrics.as_dict(),
            'profile_sha256': log.profile_digest,
            'samples': len(log.frame),
        })
    except Exception as e:
        return error_response(e)


@app.route('/api/health')
def health_check():
    """Health check endpoint"""
    settings = app.config['SETTINGS']
    return jsonify({
        'status': 'ok',
        'app': settings.APP_NAME,
        'version': settings.APP_VERSION,
        'cached_setups': len(setup_cache),
        'timestamp': datetime.now().isoformat(),
    })


@app.errorhandler(413)
def request_entity_too_large(error):
    """Handle request too large error"""
    logger.warning(f"Request too large: {error}")
    return jsonify({'error': 'リクエストが大きすぎます'}), 413


@app.errorhandler(404)
def not_found(error):
    """Handle 404 errors"""
    logger.warning(f"404 error: {error}")
    return jsonify({'error': 'ページが見つかりません'}), 404


@app.errorhandler(500)
def internal_error(error):
    """Handle 500 errors"""
    logger.error(f"Internal server error: {error}")
    return jsonify({'error': 'サーバーエラーが発生しました。管理者に連絡してください。'}), 500


@app.errorhandler(429)
def rate_limited(error):
    """Handle rate limit errors"""
    logger.warning(f"Rate limit exceeded: {error}")
    return jsonify({'error': 'リクエストが多すぎます。しばらく待ってからお試しください。'}), 429


# Security headers
@app.after_request
def set_security_headers(response):
    """Add security headers to responses"""
    response.headers['X-Content-Type-Options'] = 'nosniff'
    response.headers['X-Frame-Options'] = 'SAMEORIGIN'
    response.headers['Strict-Transport-Security'] = 'max-age=31536000; includeSubDomains'
    response.headers['Cache-Control'] = 'no-store'
    return response


if __name__ == '__main__':
    # Check environment
    debug_mode = os.getenv('FLASK_ENV', 'production') == 'development'

    port = int(os.getenv('PORT', 5000))

    logger.info("=" * 60)
    logger.info("Starting TubeMAV Flask application...")
    logger.info(f"Debug mode: {debug_mode}")
    logger.info(f"Settings: {app.config['SETTINGS'].__name__}")
    logger.info(f"Port: {port}")
    logger.info("=" * 60)

    app.run(debug=debug_mode, host='0.0.0.0', port=port, threaded=True)
