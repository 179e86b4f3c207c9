import os
import logging
from typing import Optional

from dotenv import load_dotenv
from flask import Flask, jsonify
from flask_cors import CORS

from result_store import ResultStore
from routes.health import health_bp
from routes.results import results_bp

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

BLUEPRINTS = (('health_bp', health_bp), ('results_bp', results_bp))


def create_app(store_dir: Optional[str] = None) -> Flask:
    """Read-only results service over one result store"""
    store_dir = store_dir or os.environ.get('REPLAB_STORE_DIR', 'results')

    app = Flask(__name__)
    app.config['RESULT_STORE'] = ResultStore(store_dir)

    # Enable CORS
    CORS(app)

    logger.info(f"Registering {len(BLUEPRINTS)} blueprints for store {store_dir}")
    for blueprint_name, blueprint in BLUEPRINTS:
        app.register_blueprint(blueprint, url_prefix='/api')
        logger.debug(f"Registered blueprint: {blueprint_name}")

    @app.route('/api/status')
    def api_status():
        """API status endpoint"""
        return jsonify({
            'status': 'ok',
            'message': 'Results API is running',
            'store': store_dir,
            'blueprints_loaded': [name for name, _ in BLUEPRINTS],
        })

    @app.errorhandler(404)
    def not_found(error):
        return jsonify({'error': 'Not found'}), 404

    return app


if __name__ == '__main__':
    logging.basicConfig(level=os.getenv('REPLAB_LOG_LEVEL', 'INFO').upper())
    create_app().run(debug=True, host='0.0.0.0', port=5000)
